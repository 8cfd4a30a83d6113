#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <sstream>

#include "cli_util.hpp"
#include "json.hpp"
#include "sav/store.hpp"
#include "sav/synth.hpp"

using cliutil::run_cli;
using cliutil::slurp;
using cliutil::spit;

namespace {

// Planted spec small enough to keep each CLI call quick.
nlohmann::json spec_json() {
  return {{"layers", 6},      {"heads", 8},
          {"head_dim", 16},   {"classes", 3},
          {"examples_per_class", 30},
          {"planted", {{0, 1}, {2, 4}, {5, 7}}},
          {"separation", 8.0}, {"noise_std", 1.0},
          {"seed", 5}};
}

struct Fixture {
  cliutil::TempDir dir{"cli"};
  std::string spec = dir / "spec.json";
  std::string store = dir / "store.savf";
  Fixture() {
    spit(spec, spec_json().dump());
    const auto r = run_cli({"synth", "--spec", spec, "--out", store});
    REQUIRE(r.code == 0);
  }
};

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE_FIXTURE(Fixture, "synth and validate") {
  auto r = run_cli({"validate", store});
  CHECK(r.code == 0);
  CHECK(r.out == "SAVF v1 layers=6 heads=8 head_dim=16 examples=90 labels=3 token_position=last\n");
  r = run_cli({"validate", "--json", store});
  CHECK(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["examples"] == 90);
  CHECK(j["labels"] == nlohmann::json::array({"class0", "class1", "class2"}));

  // Same spec, same bytes; --seed overrides the spec seed.
  CHECK(run_cli({"synth", "--spec", spec, "--out", dir / "again.savf"}).code == 0);
  CHECK(slurp(dir / "again.savf") == slurp(store));
  CHECK(run_cli({"--seed", "6", "synth", "--spec", spec, "--out", dir / "other.savf"}).code == 0);
  CHECK(slurp(dir / "other.savf") != slurp(store));

  auto no_seed = spec_json();
  no_seed.erase("seed");
  spit(dir / "noseed.json", no_seed.dump());
  CHECK(run_cli({"synth", "--spec", dir / "noseed.json", "--out", dir / "x.savf"}).code == 1);
  spit(dir / "bad.json", "{\"layers\": 2");
  CHECK(run_cli({"synth", "--spec", dir / "bad.json", "--out", dir / "x.savf"}).code == 1);
}

TEST_CASE_FIXTURE(Fixture, "validate rejects damaged files") {
  const auto bytes = slurp(store);
  auto bad = bytes;
  bad[0] = 'X';
  spit(dir / "magic.savf", bad);
  auto r = run_cli({"validate", dir / "magic.savf"});
  CHECK(r.code == 2);
  CHECK(r.err.find("magic") != std::string::npos);

  spit(dir / "short.savf", bytes.substr(0, bytes.size() - 1));
  r = run_cli({"validate", dir / "short.savf"});
  CHECK(r.code == 2);
  CHECK(r.err.find("byte") != std::string::npos);

  CHECK(run_cli({"validate", dir / "missing.savf"}).code == 2);
  CHECK(run_cli({"validate"}).code == 1);
  CHECK(run_cli({"frobnicate"}).code == 1);
}

TEST_CASE_FIXTURE(Fixture, "select and classify") {
  const auto model = dir / "model.json", query = dir / "query.savf", preds = dir / "preds.jsonl";
  auto r = run_cli({"--k", "3", "--shots", "10", "--seed", "7", "select", store, "--query-out", query,
                "--out", model});
  REQUIRE(r.code == 0);
  const auto m = nlohmann::json::parse(slurp(model));
  std::vector<std::pair<int, int>> heads;
  for (const auto& h : m["heads"]) heads.push_back({h["layer"], h["head"]});
  std::sort(heads.begin(), heads.end());
  CHECK(heads == std::vector<std::pair<int, int>>{{0, 1}, {2, 4}, {5, 7}});
  CHECK(m["provenance"]["shots_per_label"] == 10);
  CHECK(m["provenance"]["seed"] == 7);
  CHECK(m["provenance"]["source_digest"] == sav::store_digest(sav::read_store_file(store)));

  r = run_cli({"classify", model, query, "--out", preds});
  REQUIRE(r.code == 0);
  CHECK(r.out == "accuracy=1.000000 (60/60)\n");
  const auto pl = lines(slurp(preds));
  CHECK(pl.size() == 60);
  const auto first = nlohmann::json::parse(pl[0]);
  CHECK(first.contains("example_id"));
  CHECK(first["votes"].size() == 3);

  // Byte-identical reruns, also across thread counts.
  for (const char* jobs : {"1", "4"}) {
    const auto m2 = dir / (std::string("m") + jobs + ".json");
    const auto p2 = dir / (std::string("p") + jobs + ".jsonl");
    CHECK(run_cli({"--jobs", jobs, "--k", "3", "--shots", "10", "--seed", "7", "select", store, "--out", m2}).code == 0);
    CHECK(slurp(m2) == slurp(model));
    CHECK(run_cli({"--jobs", jobs, "classify", model, query, "--out", p2}).code == 0);
    CHECK(slurp(p2) == slurp(preds));
  }

  CHECK(run_cli({"--k", "0", "select", store, "--out", model}).code == 1);
  CHECK(run_cli({"--k", "49", "select", store, "--out", model}).code == 1);
  CHECK(run_cli({"--shots", "10", "select", store, "--out", model}).code == 1);  // no seed
  CHECK(run_cli({"--method", "knn", "select", store, "--out", model}).code == 1);
  CHECK(run_cli({"--shots", "30", "--seed", "1", "select", store, "--out", model}).code == 1);
  CHECK(run_cli({"select", store}).code == 1);  // no --out
}

TEST_CASE_FIXTURE(Fixture, "classify data errors") {
  const auto model = dir / "model.json";
  REQUIRE(run_cli({"--k", "3", "select", store, "--out", model}).code == 0);

  // Shape mismatch.
  auto other = spec_json();
  other["head_dim"] = 8;
  spit(dir / "other.json", other.dump());
  REQUIRE(run_cli({"synth", "--spec", dir / "other.json", "--out", dir / "other.savf"}).code == 0);
  CHECK(run_cli({"classify", model, dir / "other.savf", "--out", dir / "p.jsonl"}).code == 2);

  // Hand-made store claiming zero examples.
  auto bytes = slurp(store);
  std::string empty = bytes.substr(0, sav::StoreHeader::kEncodedSize);
  for (int i = 0; i < 4; ++i) empty[20 + i] = 0;
  empty += bytes.substr(29, 3 * (2 + 6));  // label table: three "classN" names
  spit(dir / "empty.savf", empty);
  CHECK(run_cli({"classify", model, dir / "empty.savf", "--out", dir / "p.jsonl"}).code == 2);

  spit(dir / "broken.json", "{\"version\": 1}");
  CHECK(run_cli({"classify", dir / "broken.json", store, "--out", dir / "p.jsonl"}).code == 2);
}

TEST_CASE_FIXTURE(Fixture, "probe and layer models through select") {
  const auto probe = dir / "probe.json", layers = dir / "layers.json";
  REQUIRE(run_cli({"--k", "3", "--method", "probe", "--shots", "10", "--seed", "2", "select", store,
               "--query-out", dir / "q.savf", "--out", probe}).code == 0);
  CHECK(nlohmann::json::parse(slurp(probe))["alternate"]["kind"] == "probe");
  auto r = run_cli({"classify", probe, dir / "q.savf", "--out", dir / "p.jsonl"});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("accuracy=", 0) == 0);

  REQUIRE(run_cli({"--method", "layers", "select", store, "--n-layers", "2", "--out", layers}).code == 0);
  const auto lj = nlohmann::json::parse(slurp(layers));
  CHECK(lj["unit"] == "layer");
  CHECK(lj["heads"].size() == 2);
}

TEST_CASE_FIXTURE(Fixture, "eval") {
  const auto report = dir / "report.json";
  auto r = run_cli({"--seed", "3", "--k", "3", "eval", store, "--out", report});
  REQUIRE(r.code == 0);
  CHECK(r.out == "accuracy=1.000000\n");
  const auto j = nlohmann::json::parse(slurp(report));
  CHECK(j["method"] == "centroid");
  CHECK(j["n_query"] == 30);
  const auto first = slurp(report);
  CHECK(run_cli({"--seed", "3", "--k", "3", "eval", store, "--out", report}).code == 0);
  CHECK(slurp(report) == first);

  for (const char* m : {"knn", "probe", "layers", "rwma"}) {
    CAPTURE(m);
    CHECK(run_cli({"--seed", "3", "--k", "3", "--method", m, "eval", store, "--out", report}).code == 0);
  }
  CHECK(run_cli({"--seed", "3", "--method", "svm", "eval", store, "--out", report}).code == 1);
  CHECK(run_cli({"eval", store, "--out", report}).code == 1);  // no seed
  CHECK(run_cli({"--seed", "3", "eval", store, "--distractors", "25", "--out", report}).code == 1);
  CHECK(run_cli({"--seed", "3", "eval", store, "--knn-mode", "global", "--out", report}).code == 1);
}

TEST_CASE_FIXTURE(Fixture, "sweep") {
  const auto csv = dir / "sweep.csv", js = dir / "sweep.json";
  auto r = run_cli({"--seed", "1", "sweep", store, "--axis", "k", "--values", "1,3,5", "--out", csv,
                "--report", js});
  REQUIRE(r.code == 0);
  const auto rows = lines(slurp(csv));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == "value,accuracy,axis,method,k,shots,seed,distractors,group_size,n_query");
  for (const auto& row : rows) CHECK(std::count(row.begin(), row.end(), ',') == 9);
  CHECK(nlohmann::json::parse(slurp(js))["points"].size() == 3);

  r = run_cli({"--k", "3", "sweep", store, "--axis", "seed", "--values", "1,2,3", "--out", csv});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("mean=", 0) == 0);
  CHECK(run_cli({"--seed", "1", "--k", "3", "sweep", store, "--axis", "shots", "--values", "1,5,20",
             "--out", csv}).code == 0);
  CHECK(run_cli({"--seed", "1", "sweep", store, "--axis", "distractors", "--values", "0,2", "--out", csv}).code == 0);
  CHECK(run_cli({"--seed", "1", "sweep", store, "--axis", "temperature", "--values", "1", "--out", csv}).code == 1);
  CHECK(run_cli({"--seed", "1", "sweep", store, "--axis", "k", "--values", "5,x", "--out", csv}).code == 1);
  CHECK(run_cli({"--seed", "1", "sweep", store, "--axis", "k", "--values", "5,1", "--out", csv}).code == 1);
}

TEST_CASE_FIXTURE(Fixture, "online and project") {
  const auto model = dir / "model.json", query = dir / "q.savf";
  REQUIRE(run_cli({"--k", "5", "--shots", "10", "--seed", "4", "select", store, "--query-out", query,
               "--out", model}).code == 0);
  const auto w1 = dir / "w1.csv", w2 = dir / "w2.csv";
  auto r = run_cli({"--seed", "9", "online", model, query, "--out", w1});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("accuracy=", 0) == 0);
  CHECK(run_cli({"--seed", "9", "online", model, query, "--out", w2}).code == 0);
  CHECK(slurp(w1) == slurp(w2));
  const auto rows = lines(slurp(w1));
  CHECK(rows.size() == 62);
  CHECK(rows[0] == "step,w0,w1,w2,w3,w4");
  CHECK(run_cli({"online", model, query, "--out", w1}).code == 1);
  CHECK(run_cli({"--seed", "9", "online", model, query, "--epsilon", "1.5", "--out", w1}).code == 1);

  const auto proj = dir / "proj.csv";
  CHECK(run_cli({"project", model, store, "--out", proj}).code == 0);
  const auto pr = lines(slurp(proj));
  CHECK(pr.size() == 91);
  CHECK(pr[0] == "example_id,label,pc1,pc2");
  CHECK(run_cli({"project", model, store, "--head", "5:7", "--out", "-"}).code == 0);
  CHECK(run_cli({"project", model, store, "--head", "9:9", "--out", proj}).code == 2);
  CHECK(run_cli({"project", model, store, "--head", "five", "--out", proj}).code == 1);
}
