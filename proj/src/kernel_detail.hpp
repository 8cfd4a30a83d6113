#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sav/classify.hpp"
#include "sav/select.hpp"

namespace sav::kernels::detail {

// Per-class double sums of one unit over the support store, [class][width].
inline void unit_class_sums(const ActivationStore& support, const UnitLayout& layout,
                            std::size_t unit, std::span<double> sums) {
  std::fill(sums.begin(), sums.end(), 0.0);
  for (const auto& ex : support.examples) {
    const auto v = unit_span(ex, layout, unit);
    double* dst = sums.data() + std::size_t{ex.label} * layout.width;
    for (std::size_t i = 0; i < layout.width; ++i) dst[i] += v[i];
  }
}

// Nearest centroid with the example removed from its own class centroid.
// A class left empty by the removal has similarity 0.
inline std::uint32_t predict_leave_one_out(std::span<const float> centroids,
                                           std::span<const double> sums,
                                           std::span<const std::size_t> counts,
                                           std::span<const float> vec, std::uint32_t own,
                                           std::span<float> scratch) {
  const std::size_t width = vec.size();
  std::uint32_t best = 0;
  double best_sim = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    double s = 0.0;
    if (c == own) {
      if (counts[c] > 1) {
        const double n = static_cast<double>(counts[c] - 1);
        for (std::size_t i = 0; i < width; ++i) {
          scratch[i] = static_cast<float>((sums[c * width + i] - vec[i]) / n);
        }
        s = cosine_unchecked(vec, scratch.first(width));
      }
    } else {
      s = cosine_unchecked(vec, centroids.subspan(c * width, width));
    }
    if (c == 0 || s > best_sim) {
      best = static_cast<std::uint32_t>(c);
      best_sim = s;
    }
  }
  return best;
}

inline void finish_centroids(std::span<const double> sums, std::span<const std::size_t> counts,
                             std::size_t width, std::span<float> out) {
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double n = static_cast<double>(counts[c]);
    for (std::size_t i = 0; i < width; ++i) {
      out[c * width + i] = counts[c] ? static_cast<float>(sums[c * width + i] / n) : 0.0f;
    }
  }
}

}  // namespace sav::kernels::detail
