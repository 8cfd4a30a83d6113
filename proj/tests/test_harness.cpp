#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>
#include <sstream>

#include "sav/harness.hpp"
#include "sav/synth.hpp"
#include "test_util.hpp"

using namespace sav;

namespace {

PlantSpec spec(std::uint64_t seed, double separation) {
  PlantSpec p;
  p.shape = {8, 8, 16};
  p.num_classes = 4;
  p.examples_per_class = 40;
  p.planted = {{0, 4}, {2, 1}, {3, 3}, {5, 6}, {7, 2}};
  p.separation = separation;
  p.seed = seed;
  return p;
}

const ActivationStore& sep8() {
  static const auto s = generate(spec(1, 8));
  return s;
}

EvalConfig config(Method m = Method::centroid) {
  EvalConfig c;
  c.method = m;
  c.seed = 3;
  return c;
}

std::vector<std::uint64_t> ids(const ActivationStore& s) {
  std::vector<std::uint64_t> out;
  for (const auto& e : s.examples) out.push_back(e.example_id);
  return out;
}

void check_staged(const std::function<void()>& fn, ErrorClass cls, const std::string& stage) {
  try {
    fn();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.error_class() == cls);
    CHECK(std::string(e.what()).rfind(stage, 0) == 0);
  }
}

}  // namespace

TEST_CASE("method names") {
  for (Method m : {Method::centroid, Method::knn, Method::probe, Method::layers, Method::rwma}) {
    CHECK(method_from_string(to_string(m)) == m);
  }
  CHECK_THROWS_AS(method_from_string("svm"), ConfigError);
}

TEST_CASE("every method runs end to end") {
  for (Method m : {Method::centroid, Method::knn, Method::probe, Method::layers, Method::rwma}) {
    auto c = config(m);
    c.epochs = 20;
    const auto r = evaluate_store(sep8(), c);
    CAPTURE(to_string(m));
    CHECK(r.method == m);
    CHECK(r.n_support == 80);
    CHECK(r.n_query == 80);
    CHECK(r.result.predictions.size() == 80);
    CHECK(r.accuracy >= 0.9);
    CHECK(r.unit == (m == Method::layers ? UnitKind::layer : UnitKind::head));
    if (m == Method::centroid || m == Method::knn) {
      for (const auto& p : r.result.predictions) CHECK(p.tally.total_votes() == r.selected.size());
    }
  }
  auto c = config(Method::knn);
  c.knn_mode = KnnMode::pooled;
  CHECK(evaluate_store(sep8(), c).accuracy >= 0.9);
}

TEST_CASE("centroid accuracy at separation 8 and the report shape") {
  const auto r = evaluate_store(sep8(), config());
  CHECK(r.accuracy >= 0.95);
  CHECK(r.scores.size() == 64);
  CHECK(r.selected.size() == 20);
  std::set<HeadAddress> top;
  for (std::size_t i = 0; i < 5; ++i) top.insert(r.selected[i].head);
  const auto p = spec(1, 8);
  CHECK(top == std::set<HeadAddress>(p.planted.begin(), p.planted.end()));

  const auto j1 = to_json(r, sep8().labels).dump(2);
  const auto j2 = to_json(evaluate_store(sep8(), config()), sep8().labels).dump(2);
  CHECK(j1 == j2);
  const auto j = nlohmann::json::parse(j1);
  for (const char* key : {"task", "method", "unit", "accuracy", "n_support", "n_query", "config",
                          "selected", "scores", "predictions"}) {
    CHECK(j.contains(key));
  }
}

TEST_CASE("errors carry their stage") {
  auto c = config();
  c.k = 65;
  check_staged([&] { evaluate_store(sep8(), c); }, ErrorClass::usage, "select");
  c = config();
  c.shots = 40;
  check_staged([&] { evaluate_store(sep8(), c); }, ErrorClass::usage, "split");
  c = config();
  c.distractors = 20;
  check_staged([&] { evaluate_store(sep8(), c); }, ErrorClass::usage, "noise");
  c = config();
  c.group_size = 3;
  check_staged([&] { evaluate_store(sep8(), c); }, ErrorClass::usage, "icl-analog");
}

TEST_CASE("shots sweep") {
  const auto store = generate(spec(2, 4));
  auto c = config();
  c.k = 5;
  const auto sw = sweep_shots(store, {5, 10, 20}, c);
  CHECK(sw.axis == "shots");
  REQUIRE(sw.points.size() == 3);
  for (std::size_t i = 1; i < 3; ++i) {
    CHECK(sw.points[i].accuracy >= sw.points[i - 1].accuracy - 0.02);
  }
  // Shared query from the largest split; each point matches an explicit run.
  const auto query = split_store(store, 20, c.seed).query;
  for (const auto& p : sw.points) {
    CHECK(p.n_query == query.size());
    const auto support = split_store(store, p.config.shots, c.seed).support;
    CHECK(p.accuracy == run_eval(support, query, p.config).accuracy);
  }
  // Nested supports.
  const auto s5 = ids(split_store(store, 5, c.seed).support);
  const auto s10 = ids(split_store(store, 10, c.seed).support);
  for (auto id : s5) CHECK(std::binary_search(s10.begin(), s10.end(), id));

  CHECK(sweep_shots(sep8(), {1}, c).points.size() == 1);
  CHECK_THROWS_AS(sweep_shots(store, {5, 40}, c), PreconditionError);
  CHECK_THROWS_AS(sweep_shots(store, {10, 5}, c), PreconditionError);
  CHECK_THROWS_AS(sweep_shots(store, {}, c), PreconditionError);
}

TEST_CASE("k sweep") {
  const auto sw = sweep_k(sep8(), {1, 5, 10, 20}, config());
  REQUIRE(sw.points.size() == 4);
  for (const auto& p : sw.points) CHECK(p.accuracy == evaluate_store(sep8(), p.config).accuracy);
  // k = 1 equals the best single head
  const auto r = evaluate_store(sep8(), config());
  const auto split = split_store(sep8(), 20, 3);
  const auto bank = build_centroids(split.support);
  std::size_t right = 0;
  for (const auto& ex : split.query.examples) {
    const auto h = r.selected[0].head;
    right += head_prediction(h, bank, ex.head(sep8().shape(), h)) == ex.label;
  }
  CHECK(sw.points[0].accuracy == double(right) / split.query.size());
  // Plateau once the planted heads are in. At k = 20 the 15 uninformative
  // heads start to outvote them, so the plateau is only checked up to k = 10.
  CHECK(std::abs(sw.points[2].accuracy - sw.points[1].accuracy) <= 0.02);
  CHECK(sw.points[3].accuracy <= sw.points[1].accuracy);
  CHECK_THROWS_AS(sweep_k(sep8(), {5, 65}, config()), PreconditionError);
}

TEST_CASE("distractor sweep") {
  const auto sw = sweep_distractors(sep8(), {0, 2, 5}, config());
  REQUIRE(sw.points.size() == 3);
  CHECK(sw.points[0].accuracy - sw.points[1].accuracy <= 0.05);
  for (const auto& p : sw.points) CHECK(p.accuracy == evaluate_store(sep8(), p.config).accuracy);
}

TEST_CASE("seed robustness") {
  const auto one = seed_robustness(sep8(), {4}, config());
  CHECK(one.stddev == 0.0);
  auto c = config();
  c.k = 5;  // one vote per planted head
  const auto five = seed_robustness(sep8(), {1, 2, 3, 4, 5}, c);
  CHECK(five.runs.points.size() == 5);
  CHECK(five.stddev <= 0.02);
  double m = 0;
  for (const auto& p : five.runs.points) m += p.accuracy;
  CHECK(five.mean == doctest::Approx(m / 5));
  CHECK_THROWS_AS(seed_robustness(sep8(), {}, config()), PreconditionError);
}

TEST_CASE("icl-analog grouping") {
  const auto support = split_store(sep8(), 20, 1).support;
  CHECK(icl_style_support(support, 1, 5) == support);

  const auto one_each = icl_style_support(support, 20, 5);
  CHECK(one_each.class_counts() == std::vector<std::size_t>(4, 1));
  // The single pseudo-example of a class is the class centroid, id = smallest id.
  const auto bank = build_centroids(support);
  for (const auto& ex : one_each.examples) {
    std::uint64_t smallest = UINT64_MAX;
    for (const auto& s : support.examples) {
      if (s.label == ex.label) smallest = std::min(smallest, s.example_id);
    }
    CHECK(ex.example_id == smallest);
    const auto c = bank.centroid(HeadAddress{2, 1}, ex.label);
    const auto v = ex.head(support.shape(), {2, 1});
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == doctest::Approx(c[i]).epsilon(1e-6));
  }
  CHECK(icl_style_support(support, 5, 5).class_counts() == std::vector<std::size_t>(4, 4));
  CHECK_THROWS_AS(icl_style_support(support, 3, 5), PreconditionError);

  const auto store = generate(spec(6, 3));
  auto c = config();
  const double ungrouped = evaluate_store(store, c).accuracy;
  c.group_size = 5;
  const auto grouped = evaluate_store(store, c);
  CHECK(grouped.accuracy <= ungrouped);
  CHECK(grouped.n_support == 16);
}

TEST_CASE("jacobi eigen") {
  const auto e = jacobi_eigen({2, 1, 1, 2}, 2);
  CHECK(e.values[0] == doctest::Approx(3));
  CHECK(e.values[1] == doctest::Approx(1));
  const double r = std::sqrt(0.5);
  CHECK(e.vectors[0] == doctest::Approx(r));
  CHECK(e.vectors[2] == doctest::Approx(r));

  std::mt19937_64 g(9);
  std::normal_distribution<double> nd;
  for (std::size_t n : {1, 3, 6, 10}) {
    std::vector<double> a(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) a[i * n + j] = a[j * n + i] = nd(g);
    }
    const auto d = jacobi_eigen(a, n);
    CHECK(std::is_sorted(d.values.rbegin(), d.values.rend()));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double rec = 0, ortho = 0;
        for (std::size_t k = 0; k < n; ++k) {
          rec += d.vectors[i * n + k] * d.values[k] * d.vectors[j * n + k];
          ortho += d.vectors[k * n + i] * d.vectors[k * n + j];
        }
        CHECK(std::abs(rec - a[i * n + j]) <= 1e-9);
        CHECK(std::abs(ortho - (i == j ? 1.0 : 0.0)) <= 1e-9);
      }
    }
    CHECK(jacobi_eigen(a, n).vectors == d.vectors);
  }
  CHECK_THROWS_AS(jacobi_eigen({1, 2, 3}, 2), DimensionError);
}

TEST_CASE("projection") {
  SUBCASE("two distinct points") {
    const auto s = testutil::tiny_store({1, 1, 3}, {"a", "b"}, {{0, {1, 2, 3}}, {1, {3, 1, 0}}});
    const auto pts = emit_projection(fit_model(s, {.k = 1}), s);
    REQUIRE(pts.size() == 2);
    CHECK(pts[0].pc1 != doctest::Approx(pts[1].pc1));
    CHECK(std::abs(pts[0].pc2) <= 1e-12);
    CHECK(std::abs(pts[1].pc2) <= 1e-12);
  }
  SUBCASE("constant vectors") {
    const auto s = testutil::tiny_store({1, 2, 2}, {"a", "b"},
                                        {{0, {1, 1, 5, 5}}, {1, {1, 1, 5, 5}}, {0, {1, 1, 5, 5}}});
    for (const auto& p : emit_projection(fit_model(s, {.k = 1}), s, HeadAddress{0, 1})) {
      CHECK(p.pc1 == 0.0);
      CHECK(p.pc2 == 0.0);
    }
  }
  SUBCASE("planted head separates two classes") {
    auto p = spec(8, 8);
    p.num_classes = 2;
    const auto s = generate(p);
    const auto model = fit_model(s, {.k = 5});
    const auto pts = emit_projection(model, s);
    double mean[2] = {0, 0}, sq[2] = {0, 0};
    std::size_t n[2] = {0, 0};
    for (const auto& q : pts) {
      mean[q.label] += q.pc1;
      sq[q.label] += q.pc1 * q.pc1;
      ++n[q.label];
    }
    double sd = 0;
    for (int c = 0; c < 2; ++c) {
      mean[c] /= n[c];
      sd = std::max(sd, std::sqrt(sq[c] / n[c] - mean[c] * mean[c]));
    }
    CHECK(std::abs(mean[0] - mean[1]) >= 2 * sd);

    std::ostringstream out;
    write_projection_csv(pts, s.labels, out);
    CHECK(out.str().rfind("example_id,label,pc1,pc2\n", 0) == 0);
    CHECK_THROWS_AS(emit_projection(model, s, HeadAddress{9, 0}), LookupError);
  }
}

TEST_CASE("sweep csv") {
  const auto sw = sweep_k(sep8(), {1, 5}, config());
  std::ostringstream out;
  write_sweep_csv(sw, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "value,accuracy,axis,method,k,shots,seed,distractors,group_size,n_query");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 9);
  }
  CHECK(rows == 2);
  const auto j = to_json(sw);
  CHECK(j["axis"] == "k");
  CHECK(j["points"].size() == 2);
}
