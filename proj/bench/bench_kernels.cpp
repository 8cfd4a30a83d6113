// Serial reference vs OpenMP kernels on a planted store of realistic size.
// Pass --benchmark_filter=... to narrow; the thread-count argument is the
// OpenMP team size for the omp variants.

#include <benchmark/benchmark.h>

#include "sav/kernels.hpp"
#include "sav/synth.hpp"

namespace {

const sav::ActivationStore& store() {
  static const auto s = [] {
    sav::PlantSpec p;
    p.shape = {24, 16, 32};
    p.num_classes = 4;
    p.examples_per_class = 70;
    p.planted = sav::random_heads(p.shape, 20, 1);
    p.separation = 8;
    p.seed = 1;
    return sav::generate(p);
  }();
  return s;
}

const sav::CentroidBank& bank() {
  static const auto b = sav::build_centroids(store());
  return b;
}

const sav::SavModel& model() {
  static const auto m = sav::fit_model(store(), {});
  return m;
}

void BM_CentroidsSerial(benchmark::State& state) {
  const auto layout = sav::unit_layout(store().shape(), sav::UnitKind::head);
  std::vector<float> out(layout.count * 4 * layout.width);
  for (auto _ : state) {
    sav::kernels::serial::centroids(store(), layout, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_CentroidsOmp(benchmark::State& state) {
  sav::kernels::set_num_threads(static_cast<int>(state.range(0)));
  const auto layout = sav::unit_layout(store().shape(), sav::UnitKind::head);
  std::vector<float> out(layout.count * 4 * layout.width);
  for (auto _ : state) {
    sav::kernels::omp::centroids(store(), layout, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_ScoreSerial(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(sav::kernels::serial::score(store(), bank(), sav::ScoreMode::leave_one_in));
  }
}

void BM_ScoreOmp(benchmark::State& state) {
  sav::kernels::set_num_threads(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(sav::kernels::omp::score(store(), bank(), sav::ScoreMode::leave_one_in));
  }
}

void BM_ClassifySerial(benchmark::State& state) {
  const sav::CentroidVoter voter(model());
  for (auto _ : state) {
    benchmark::DoNotOptimize(sav::kernels::serial::classify(voter, model(), store()));
  }
}

void BM_ClassifyOmp(benchmark::State& state) {
  sav::kernels::set_num_threads(static_cast<int>(state.range(0)));
  const sav::CentroidVoter voter(model());
  for (auto _ : state) {
    benchmark::DoNotOptimize(sav::kernels::omp::classify(voter, model(), store()));
  }
}

}  // namespace

BENCHMARK(BM_CentroidsSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CentroidsOmp)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScoreSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScoreOmp)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ClassifySerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ClassifyOmp)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
