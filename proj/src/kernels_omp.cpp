#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "kernel_detail.hpp"
#include "sav/kernels.hpp"

namespace sav::kernels {

void set_num_threads(int jobs) {
#ifdef _OPENMP
  if (jobs > 0) omp_set_num_threads(jobs);
#else
  (void)jobs;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace omp {

void centroids(const ActivationStore& support, const UnitLayout& layout, std::span<float> out) {
  const std::size_t num_classes = support.labels.size();
  const auto counts = support.class_counts();
  const std::size_t stride = num_classes * layout.width;
  // Each thread owns a contiguous block of units and streams the examples
  // over it, so reads stay sequential within each payload. Per-unit sums
  // still accumulate in store order, matching the serial kernel bit for bit.
#pragma omp parallel
  {
#ifdef _OPENMP
    const auto team = static_cast<std::size_t>(omp_get_num_threads());
    const auto me = static_cast<std::size_t>(omp_get_thread_num());
#else
    const std::size_t team = 1, me = 0;
#endif
    const std::size_t lo = layout.count * me / team, hi = layout.count * (me + 1) / team;
    if (lo < hi) {
      std::vector<double> sums((hi - lo) * stride, 0.0);
      for (const auto& ex : support.examples) {
        const float* src = ex.payload.data() + lo * layout.width;
        for (std::size_t u = 0; u < hi - lo; ++u, src += layout.width) {
          double* dst = sums.data() + (u * num_classes + ex.label) * layout.width;
          for (std::size_t i = 0; i < layout.width; ++i) dst[i] += src[i];
        }
      }
      for (std::size_t u = lo; u < hi; ++u) {
        detail::finish_centroids(std::span<const double>(sums).subspan((u - lo) * stride, stride),
                                 counts, layout.width, out.subspan(u * stride, stride));
      }
    }
  }
}

std::vector<std::uint32_t> score(const ActivationStore& support, const CentroidBank& bank,
                                 ScoreMode mode) {
  const auto& layout = bank.layout;
  std::vector<std::uint32_t> correct(layout.count, 0);
  const auto units = static_cast<std::ptrdiff_t>(layout.count);
#pragma omp parallel
  {
    std::vector<double> sums(bank.num_classes * layout.width);
    std::vector<float> scratch(layout.width);
#pragma omp for schedule(static)
    for (std::ptrdiff_t u = 0; u < units; ++u) {
      const auto unit = static_cast<std::size_t>(u);
      const auto cents = bank.unit_centroids(unit);
      if (mode == ScoreMode::leave_one_out) detail::unit_class_sums(support, layout, unit, sums);
      std::uint32_t hits = 0;
      for (const auto& ex : support.examples) {
        const auto v = unit_span(ex, layout, unit);
        const auto pred = mode == ScoreMode::leave_one_in
                              ? nearest_centroid(cents, bank.num_classes, v)
                              : detail::predict_leave_one_out(cents, sums, bank.class_counts, v,
                                                              ex.label, scratch);
        hits += pred == ex.label ? 1U : 0U;
      }
      correct[unit] = hits;
    }
  }
  return correct;
}

std::vector<Prediction> classify(const HeadVoter& voter, const SavModel& model,
                                 const ActivationStore& query) {
  std::vector<Prediction> out(query.size());
  const auto n = static_cast<std::ptrdiff_t>(query.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] =
        classify_example(voter, model, query.examples[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace omp
}  // namespace sav::kernels
