#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sstream>

#include "sav/alternates.hpp"
#include "sav/classify.hpp"
#include "sav/synth.hpp"
#include "test_util.hpp"

using namespace sav;
using testutil::tiny_store;

namespace {

PlantSpec spec(std::uint64_t seed, double separation = 6.0) {
  PlantSpec p;
  p.shape = {4, 6, 8};
  p.num_classes = 3;
  p.examples_per_class = 25;
  p.planted = {{0, 2}, {1, 4}, {3, 1}};
  p.separation = separation;
  p.seed = seed;
  return p;
}

// Exhaustive neighbour scan: sort all support vectors by (cosine desc, id asc).
std::uint32_t ref_knn(const ActivationStore& support, HeadAddress head, std::size_t kappa,
                      const std::vector<float>& vec) {
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t e = 0; e < support.size(); ++e) {
    order.push_back({testutil::ref_cosine(vec, testutil::ref_head_vector(support, e, head)), e});
  }
  std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return support.examples[a.second].example_id < support.examples[b.second].example_id;
  });
  std::vector<std::size_t> counts(support.labels.size(), 0);
  for (std::size_t i = 0; i < kappa; ++i) ++counts[support.examples[order[i].second].label];
  return std::uint32_t(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace

TEST_CASE("knn examples") {
  const auto s = tiny_store({1, 1, 2}, {"A", "B"},
                            {{0, {1, 0}}, {0, {1, 0.2f}}, {1, {0.9f, 0.5f}}, {1, {0, 1}}, {1, {-1, 1}}});
  const auto m = fit_model(s, {.k = 1});
  SUBCASE("nearest self") {
    const auto bank = build_knn_bank(s, m, 1);
    for (const auto& ex : s.examples) {
      CHECK(knn_head_prediction(bank, {0, 0}, ex.payload) == ex.label);
    }
  }
  SUBCASE("mode of three") {
    // neighbours of (1, 0.1): ids 0, 1 (A) then 2 (B)
    const auto bank = build_knn_bank(s, m, 3);
    CHECK(knn_head_prediction(bank, {0, 0}, std::vector<float>{1, 0.1f}) == 0);
  }
  SUBCASE("kappa = support size gives the support majority") {
    const auto bank = build_knn_bank(s, m, 5);
    CHECK(knn_head_prediction(bank, {0, 0}, std::vector<float>{1, 0}) == 1);
  }
  SUBCASE("label tie goes to the lower class") {
    const auto bank = build_knn_bank(s, m, 4);
    CHECK(knn_head_prediction(bank, {0, 0}, std::vector<float>{1, 0}) == 0);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(build_knn_bank(s, m, 0), PreconditionError);
    CHECK_THROWS_AS(build_knn_bank(s, m, 6), PreconditionError);
    const auto bank = build_knn_bank(s, m, 1);
    CHECK_THROWS_AS(knn_head_prediction(bank, {0, 1}, std::vector<float>{1, 0}), LookupError);
    CHECK_THROWS_AS(knn_head_prediction(bank, {0, 0}, std::vector<float>{1, 0, 0}), DimensionError);
  }
}

TEST_CASE("neighbour rank ties go to the lower example id") {
  // Ids 9 and 4 are identical vectors with different labels; kappa = 1 picks id 4.
  std::vector<ExampleActivations> ex{{9, 0, {1, 0}}, {4, 1, {1, 0}}, {2, 0, {0, 1}}};
  const auto s = make_store({1, 1, 2}, LabelVocab({"A", "B"}), ex);
  const auto bank = build_knn_bank(s, fit_model(s, {.k = 1}), 1);
  CHECK(knn_head_prediction(bank, {0, 0}, std::vector<float>{2, 0}) == 1);
}

TEST_CASE("knn matches an exhaustive neighbour scan") {
  std::mt19937_64 g(13);
  for (int t = 0; t < 60; ++t) {
    const auto s = testutil::random_store(g, {.integer_values = (t % 2) == 0});
    const auto m = fit_model(s, {.k = s.shape().num_heads()});
    const std::size_t kappa = 1 + t % s.size();
    const auto bank = build_knn_bank(s, m, kappa);
    for (std::size_t h = 0; h < s.shape().num_heads(); ++h) {
      const auto addr = s.shape().head_at(h);
      for (std::size_t e = 0; e < s.size(); ++e) {
        const auto v = testutil::ref_head_vector(s, e, addr);
        CHECK(knn_head_prediction(bank, addr, v) == ref_knn(s, addr, kappa, v));
      }
    }
  }
}

TEST_CASE("knn voting and pooled knn classify a planted store") {
  const auto split = split_store(generate(spec(1)), 10, 2);
  const auto m = fit_model(split.support, {.k = 3});
  const auto bank = build_knn_bank(split.support, m, 5);
  const KnnVoter voter(bank);
  const auto voted = classify_store(voter, m, split.query);
  const auto pooled = classify_store_pooled_knn(split.support, m, split.query, 5);
  CHECK(voted.accuracy >= 0.9);
  CHECK(pooled.accuracy >= 0.9);
  CHECK(voted.predictions.size() == split.query.size());
  CHECK_THROWS_AS(classify_store_pooled_knn(split.support, m, split.query, 0), PreconditionError);
}

TEST_CASE("probe initialization") {
  const auto p = init_probe(10, 256, 3, 4);
  CHECK(p.w1.size() == 2560);
  CHECK(p.w2.size() == 768);
  const double a1 = std::sqrt(6.0 / 266), a2 = std::sqrt(6.0 / 259);
  CHECK(std::all_of(p.w1.begin(), p.w1.end(), [&](double w) { return std::abs(w) <= a1; }));
  CHECK(std::all_of(p.w2.begin(), p.w2.end(), [&](double w) { return std::abs(w) <= a2; }));
  CHECK(std::all_of(p.b1.begin(), p.b1.end(), [](double b) { return b == 0.0; }));
  CHECK(init_probe(10, 256, 3, 4) == p);
  CHECK_FALSE(init_probe(10, 256, 3, 5) == p);
  CHECK_THROWS_AS(init_probe(10, 256, 1, 4), PreconditionError);
}

TEST_CASE("probe prediction by hand") {
  ProbeModel p;
  p.input_width = 2;
  p.hidden = 1;
  p.classes = 2;
  p.w1 = {1, -1};
  p.b1 = {0};
  p.w2 = {-1, 1};
  p.b2 = {0.5, 0};
  // (3,1): hidden 2, logits (-1.5, 2); (1,3): hidden 0, logits (0.5, 0)
  CHECK(probe_predict(p, std::vector<double>{3, 1}) == 1);
  CHECK(probe_predict(p, std::vector<double>{1, 3}) == 0);
  CHECK(probe_logits(p, std::vector<double>{3, 1}) == std::vector<double>{-1.5, 2});
  CHECK_THROWS_AS(probe_predict(p, std::vector<double>{1, 2, 3}), DimensionError);

  std::fill(p.w1.begin(), p.w1.end(), 0.0);
  std::fill(p.w2.begin(), p.w2.end(), 0.0);
  std::fill(p.b2.begin(), p.b2.end(), 0.0);
  CHECK(probe_predict(p, std::vector<double>{-4, 7}) == 0);
}

TEST_CASE("probe training") {
  const auto store = generate(spec(3, 8.0));
  const auto m = fit_model(store, {.k = 3});
  const auto p = train_probe(store, m, {.epochs = 20, .seed = 1});
  std::size_t right = 0;
  for (const auto& ex : store.examples) right += probe_predict(p, m, ex) == ex.label;
  CHECK(right == store.size());
  CHECK(train_probe(store, m, {.epochs = 20, .seed = 1}) == p);
  CHECK_THROWS_AS(train_probe(store, m, {.epochs = 0, .seed = 1}), PreconditionError);

  // Loss goes down.
  std::vector<double> x;
  std::vector<std::uint32_t> y;
  for (const auto& ex : store.examples) {
    const auto f = probe_features(m, ex);
    x.insert(x.end(), f.begin(), f.end());
    y.push_back(ex.label);
  }
  const auto init = init_probe(p.input_width, p.hidden, p.classes, 1);
  CHECK(probe_loss_and_gradient(p, x, y).loss < probe_loss_and_gradient(init, x, y).loss);
}

TEST_CASE("probe gradient matches central differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = testutil::probe_gradient_check(seed);
    CHECK(r.rel_error <= 1e-4);
    CHECK(r.checked > 2 * r.skipped);
  }
}

TEST_CASE("probe survives a model save and load") {
  const auto split = split_store(generate(spec(4)), 10, 4);
  auto m = fit_model(split.support, {.k = 3});
  m.probe = train_probe(split.support, m, {.epochs = 5, .seed = 2});
  std::stringstream io;
  save_model(m, io);
  const auto back = load_model(io);
  REQUIRE(back.probe.has_value());
  CHECK(back.probe->num_params() == m.probe->num_params());
  const auto a = classify_store_probe(*m.probe, m, split.query);
  const auto b = classify_store_probe(*back.probe, back, split.query);
  for (std::size_t i = 0; i < a.predictions.size(); ++i) {
    CHECK(a.predictions[i].predicted == b.predictions[i].predicted);
  }
  CHECK(a.accuracy == b.accuracy);
}
