// sav: command-line front end for the sparse attention vector pipeline.
//
// Exit codes: 0 success, 1 usage/config error, 2 data/format error,
// 3 internal error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sav/alternates.hpp"
#include "sav/classify.hpp"
#include "sav/harness.hpp"
#include "sav/kernels.hpp"
#include "sav/online.hpp"
#include "sav/select.hpp"
#include "sav/store.hpp"
#include "sav/synth.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

struct UsageError : sav::Error {
  explicit UsageError(const std::string& w) : sav::Error(sav::ErrorClass::usage, w) {}
};

struct Globals {
  std::optional<std::uint64_t> seed;
  int jobs = 0;
  std::size_t k = 20;
  std::uint32_t shots = 20;
  bool shots_given = false;
  std::string method = "centroid";
  std::string out;
};

std::uint64_t require_seed(const Globals& g, const char* what) {
  if (!g.seed) throw UsageError(std::string(what) + " is randomized; pass --seed");
  return *g.seed;
}

void require_out(const Globals& g) {
  if (g.out.empty()) throw UsageError("--out is required");
}

// Writes to --out, or stdout when it is "-".
template <typename Fn>
void with_output(const std::string& path, bool binary, Fn&& fn) {
  if (path == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream os(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!os) throw sav::IoError("cannot open '" + path + "' for writing");
  fn(os);
  os.flush();
  if (!os) throw sav::IoError("failed writing '" + path + "'");
}

std::optional<sav::HeadAddress> parse_head(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw UsageError("--head expects LAYER:HEAD");
  try {
    return sav::HeadAddress{static_cast<std::uint32_t>(std::stoul(s.substr(0, colon))),
                            static_cast<std::uint32_t>(std::stoul(s.substr(colon + 1)))};
  } catch (const std::exception&) {
    throw UsageError("--head expects LAYER:HEAD");
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& s, const char* flag) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<T>(v));
    } catch (const std::exception&) {
      throw UsageError(std::string(flag) + ": '" + item + "' is not a non-negative integer");
    }
  }
  if (out.empty()) throw UsageError(std::string(flag) + " needs at least one value");
  return out;
}

void log_line(const std::string& s) { std::cerr << "[sav] " << s << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse attention vector selection, classification and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every randomized step");
  app.add_option("--jobs", g.jobs, "Worker threads (default: all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--k", g.k, "Number of heads to select");
  auto* shots_opt = app.add_option("--shots", g.shots, "Support examples per label");
  app.add_option("--method", g.method, "centroid | knn | probe | layers | rwma");
  app.add_option("--out", g.out, "Output path ('-' for stdout)");

  // validate
  auto* validate = app.add_subcommand("validate", "Check an activation store and echo its header");
  std::string validate_path;
  bool validate_json = false;
  validate->add_option("store", validate_path)->required();
  validate->add_flag("--json", validate_json, "Print the JSON manifest instead of a summary");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic store from a plant spec");
  std::string spec_path;
  synth->add_option("--spec", spec_path, "Plant spec JSON")->required();

  std::string task = "task", knn_mode = "per-head";
  std::size_t kappa = 5, epochs = 20;

  // select
  auto* select = app.add_subcommand("select", "Score heads on a support store and keep the top k");
  std::string select_store, query_out;
  bool leave_one_out = false;
  std::size_t n_layers = 2;
  select->add_option("store", select_store)->required();
  select->add_option("--query-out", query_out, "With --shots: write the held-out split here");
  select->add_flag("--leave-one-out", leave_one_out, "Exclude each example from its own centroid");
  select->add_option("--n-layers", n_layers, "Layers to keep with --method layers");
  select->add_option("--epochs", epochs, "Probe training epochs with --method probe");

  // classify
  auto* classify = app.add_subcommand("classify", "Majority-vote classification of a query store");
  std::string model_path, query_path;
  classify->add_option("model", model_path)->required();
  classify->add_option("query", query_path)->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Split, select and classify in one run");
  std::string eval_store;
  std::uint32_t distractors = 0, group_size = 1;
  std::optional<double> epsilon;
  eval->add_option("store", eval_store)->required();
  eval->add_option("--task", task);
  eval->add_option("--kappa", kappa);
  eval->add_option("--knn-mode", knn_mode, "per-head | pooled");
  eval->add_option("--epochs", epochs);
  eval->add_option("--n-layers", n_layers);
  eval->add_option("--epsilon", epsilon);
  eval->add_option("--distractors", distractors, "Mislabeled support examples per class");
  eval->add_option("--group-size", group_size, "Average support examples in groups of this size");
  eval->add_flag("--leave-one-out", leave_one_out);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Accuracy over shots, k, distractors or seeds");
  std::string sweep_store, axis, values, report_path;
  sweep->add_option("store", sweep_store)->required();
  sweep->add_option("--axis", axis, "shots | k | distractors | seed")->required();
  sweep->add_option("--values", values, "Comma-separated axis values")->required();
  sweep->add_option("--report", report_path, "Also write the sweep as JSON");
  sweep->add_option("--task", task);
  sweep->add_option("--kappa", kappa);
  sweep->add_option("--epochs", epochs);
  sweep->add_option("--n-layers", n_layers);
  sweep->add_option("--distractors", distractors);
  sweep->add_option("--group-size", group_size);

  // online
  auto* online = app.add_subcommand("online", "Randomized weighted majority over a model's heads");
  std::string stream_path;
  online->add_option("model", model_path)->required();
  online->add_option("stream", stream_path)->required();
  online->add_option("--epsilon", epsilon);

  // project
  auto* project = app.add_subcommand("project", "2-D PCA coordinates of one head's vectors");
  std::string project_store, head_spec;
  project->add_option("model", model_path)->required();
  project->add_option("store", project_store)->required();
  project->add_option("--head", head_spec, "LAYER:HEAD (default: the model's best head)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  g.shots_given = shots_opt->count() > 0;

  try {
    sav::kernels::set_num_threads(g.jobs);
    if (g.k < 1) throw UsageError("--k must be >= 1");
    if (g.shots < 1) throw UsageError("--shots must be >= 1");

    if (*validate) {
      const auto store = sav::read_store_file(validate_path);
      if (validate_json) {
        std::cout << sav::store_manifest(store).dump(2) << '\n';
      } else {
        const auto& h = store.header;
        std::cout << "SAVF v" << h.version << " layers=" << h.shape.layers
                  << " heads=" << h.shape.heads << " head_dim=" << h.shape.head_dim
                  << " examples=" << h.num_examples << " labels=" << h.num_labels
                  << " token_position=" << sav::to_string(h.token_position) << '\n';
      }
      return kExitOk;
    }

    if (*synth) {
      require_out(g);
      std::ifstream is(spec_path);
      if (!is) throw sav::IoError("cannot open '" + spec_path + "'");
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(is);
      } catch (const nlohmann::json::parse_error& e) {
        throw sav::ConfigError(std::string("plant spec is not valid JSON: ") + e.what());
      }
      auto spec = sav::plant_spec_from_json(j);
      if (g.seed) {
        spec.seed = *g.seed;
      } else if (!j.contains("seed")) {
        throw UsageError("synth is randomized; pass --seed or set \"seed\" in the spec");
      }
      const auto store = sav::generate(spec);
      with_output(g.out, true, [&](std::ostream& os) { sav::write_store(store, os); });
      log_line("wrote " + std::to_string(store.size()) + " examples");
      return kExitOk;
    }

    if (*select) {
      require_out(g);
      auto store = sav::read_store_file(select_store);
      const auto source_digest = sav::store_digest(store);
      sav::SelectConfig cfg;
      cfg.k = g.k;
      cfg.mode = leave_one_out ? sav::ScoreMode::leave_one_out : sav::ScoreMode::leave_one_in;
      const auto method = sav::method_from_string(g.method);
      if (method != sav::Method::centroid && method != sav::Method::layers &&
          method != sav::Method::probe) {
        throw UsageError("select supports --method centroid, layers or probe");
      }
      if (method == sav::Method::layers) {
        cfg.kind = sav::UnitKind::layer;
        cfg.k = n_layers;
      }
      if (g.shots_given) {
        cfg.seed = require_seed(g, "selecting a support split");
        cfg.shots_per_label = g.shots;
        auto split = sav::split_store(store, g.shots, cfg.seed);
        if (!query_out.empty()) sav::write_store_file(split.query, query_out);
        store = std::move(split.support);
      } else if (!query_out.empty()) {
        throw UsageError("--query-out needs --shots");
      } else {
        const auto counts = store.class_counts();
        cfg.shots_per_label = static_cast<std::uint32_t>(*std::min_element(counts.begin(), counts.end()));
        cfg.seed = g.seed.value_or(0);
      }
      auto model = sav::fit_model(store, cfg);
      model.provenance.source_digest = source_digest;  // the file given, not the split
      if (method == sav::Method::probe) {
        sav::ProbeConfig pc;
        pc.epochs = epochs;
        pc.seed = cfg.seed;
        model.probe = sav::train_probe(store, model, pc);
      }
      with_output(g.out, false, [&](std::ostream& os) { sav::save_model(model, os); });
      log_line("selected " + std::to_string(model.k()) + " " + sav::to_string(model.kind) +
               "s from " + std::to_string(store.size()) + " support examples");
      return kExitOk;
    }

    if (*classify) {
      require_out(g);
      const auto model = sav::load_model_file(model_path);
      const auto query = sav::read_store_file(query_path);
      const auto result = model.probe ? sav::classify_store_probe(*model.probe, model, query)
                                      : sav::classify_store(model, query);
      with_output(g.out, false,
                  [&](std::ostream& os) { sav::write_predictions_jsonl(result, model.labels, os); });
      std::size_t hits = 0;
      for (const auto& p : result.predictions) hits += p.predicted == p.label ? 1 : 0;
      char line[96];
      std::snprintf(line, sizeof line, "accuracy=%.6f (%zu/%zu)", result.accuracy, hits,
                    result.predictions.size());
      std::cout << line << '\n';
      return kExitOk;
    }

    auto eval_config = [&](bool needs_seed) {
      sav::EvalConfig c;
      c.task = task;
      c.method = sav::method_from_string(g.method);
      c.k = g.k;
      c.shots = g.shots;
      c.seed = needs_seed ? require_seed(g, "evaluation") : g.seed.value_or(0);
      c.mode = leave_one_out ? sav::ScoreMode::leave_one_out : sav::ScoreMode::leave_one_in;
      c.kappa = kappa;
      if (knn_mode == "pooled") {
        c.knn_mode = sav::KnnMode::pooled;
      } else if (knn_mode != "per-head") {
        throw UsageError("--knn-mode expects per-head or pooled");
      }
      c.epochs = epochs;
      c.n_layers = n_layers;
      c.epsilon = epsilon;
      c.distractors = distractors;
      c.group_size = group_size;
      return c;
    };

    if (*eval) {
      require_out(g);
      const auto cfg = eval_config(true);
      const auto store = sav::read_store_file(eval_store);
      const auto report = sav::evaluate_store(store, cfg);
      with_output(g.out, false, [&](std::ostream& os) {
        os << sav::to_json(report, store.labels).dump(2) << '\n';
      });
      char line[64];
      std::snprintf(line, sizeof line, "accuracy=%.6f", report.accuracy);
      std::cout << line << '\n';
      return kExitOk;
    }

    if (*sweep) {
      require_out(g);
      const auto store = sav::read_store_file(sweep_store);
      sav::SweepResult result;
      if (axis == "seed") {
        const auto cfg = eval_config(false);
        const auto robust = sav::seed_robustness(store, parse_list<std::uint64_t>(values, "--values"), cfg);
        result = robust.runs;
        char line[96];
        std::snprintf(line, sizeof line, "mean=%.6f stddev=%.6f", robust.mean, robust.stddev);
        std::cout << line << '\n';
      } else {
        const auto cfg = eval_config(true);
        if (axis == "shots") {
          result = sav::sweep_shots(store, parse_list<std::uint32_t>(values, "--values"), cfg);
        } else if (axis == "k") {
          result = sav::sweep_k(store, parse_list<std::size_t>(values, "--values"), cfg);
        } else if (axis == "distractors") {
          result = sav::sweep_distractors(store, parse_list<std::uint32_t>(values, "--values"), cfg);
        } else {
          throw UsageError("--axis expects shots, k, distractors or seed");
        }
      }
      with_output(g.out, false, [&](std::ostream& os) { sav::write_sweep_csv(result, os); });
      if (!report_path.empty()) {
        with_output(report_path, false,
                    [&](std::ostream& os) { os << sav::to_json(result).dump(2) << '\n'; });
      }
      return kExitOk;
    }

    if (*online) {
      require_out(g);
      const auto seed = require_seed(g, "online learning");
      const auto model = sav::load_model_file(model_path);
      const auto stream = sav::read_store_file(stream_path);
      const auto run = sav::rwma_run(model, stream, seed, epsilon);
      with_output(g.out, false, [&](std::ostream& os) { sav::write_trajectory_csv(run, os); });
      char line[96];
      std::snprintf(line, sizeof line, "accuracy=%.6f epsilon=%.6f", run.accuracy, run.epsilon);
      std::cout << line << '\n';
      return kExitOk;
    }

    if (*project) {
      require_out(g);
      const auto model = sav::load_model_file(model_path);
      const auto store = sav::read_store_file(project_store);
      const auto points = sav::emit_projection(model, store, parse_head(head_spec));
      with_output(g.out, false,
                  [&](std::ostream& os) { sav::write_projection_csv(points, store.labels, os); });
      return kExitOk;
    }
  } catch (const sav::Error& e) {
    std::cerr << "sav: " << e.what() << '\n';
    switch (e.error_class()) {
      case sav::ErrorClass::usage: return kExitUsage;
      case sav::ErrorClass::data: return kExitData;
      case sav::ErrorClass::internal: return kExitInternal;
    }
  } catch (const std::exception& e) {
    std::cerr << "sav: internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitInternal;
}
