#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>

#include "sav/kernels.hpp"
#include "sav/synth.hpp"
#include "test_util.hpp"

using namespace sav;

namespace {

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

bool same_predictions(const std::vector<Prediction>& a, const std::vector<Prediction>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].example_id != b[i].example_id || a[i].predicted != b[i].predicted ||
        a[i].tally.votes != b[i].tally.votes ||
        std::memcmp(a[i].tally.similarity.data(), b[i].tally.similarity.data(),
                    a[i].tally.similarity.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

struct ThreadGuard {
  ~ThreadGuard() { kernels::set_num_threads(0); }
};

}  // namespace

TEST_CASE("serial and parallel kernels agree bit for bit") {
  ThreadGuard guard;
  std::mt19937_64 g(31);
  for (int t = 0; t < 40; ++t) {
    const auto s = testutil::random_store(g, {.max_layers = 6, .max_heads = 6, .max_dim = 12,
                                              .max_classes = 4, .max_examples = 40,
                                              .integer_values = (t % 4) == 0});
    for (UnitKind kind : {UnitKind::head, UnitKind::layer}) {
      const auto layout = unit_layout(s.shape(), kind);
      std::vector<float> ref(layout.count * s.labels.size() * layout.width);
      kernels::serial::centroids(s, layout, ref);
      const auto bank = build_centroids(s, kind);
      const auto model = fit_model(s, {.k = std::min<std::size_t>(3, layout.count), .kind = kind});
      const CentroidVoter voter(model);
      const auto ref_loi = kernels::serial::score(s, bank, ScoreMode::leave_one_in);
      const auto ref_loo = kernels::serial::score(s, bank, ScoreMode::leave_one_out);
      const auto ref_cls = kernels::serial::classify(voter, model, s);
      for (int jobs : {1, 2, 3, 8}) {
        kernels::set_num_threads(jobs);
        std::vector<float> par(ref.size());
        kernels::omp::centroids(s, layout, par);
        CHECK(same_bits(par, ref));
        CHECK(kernels::omp::score(s, bank, ScoreMode::leave_one_in) == ref_loi);
        CHECK(kernels::omp::score(s, bank, ScoreMode::leave_one_out) == ref_loo);
        CHECK(same_predictions(kernels::omp::classify(voter, model, s), ref_cls));
      }
    }
  }
}

TEST_CASE("thread count does not change a full fit") {
  ThreadGuard guard;
  PlantSpec p;
  p.shape = {8, 8, 16};
  p.num_classes = 4;
  p.examples_per_class = 25;
  p.planted = {{1, 2}, {3, 3}, {7, 0}};
  p.separation = 5;
  p.seed = 2;
  const auto store = generate(p);
  kernels::set_num_threads(1);
  const auto a = fit_model(store, {});
  const auto ca = classify_store(a, store);
  kernels::set_num_threads(4);
  const auto b = fit_model(store, {});
  const auto cb = classify_store(b, store);
  CHECK(a.heads == b.heads);
  CHECK(same_bits(a.centroids, b.centroids));
  CHECK(same_predictions(ca.predictions, cb.predictions));
}

TEST_CASE("thread control") {
  ThreadGuard guard;
  kernels::set_num_threads(3);
  CHECK(kernels::max_threads() == 3);
}
