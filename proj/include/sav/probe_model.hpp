#pragma once

#include <cstddef>
#include <vector>

namespace sav {

/// One-hidden-layer ReLU network over concatenated selected-unit features.
/// Weights are row-major: w1 is hidden x input, w2 is classes x hidden.
struct ProbeModel {
  static constexpr std::size_t kDefaultHidden = 256;

  std::size_t input_width = 0;
  std::size_t hidden = kDefaultHidden;
  std::size_t classes = 0;
  std::vector<double> w1, b1, w2, b2;

  std::size_t num_params() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
  // Throws ModelFormatError if shapes disagree or a parameter is non-finite.
  void check() const;

  bool operator==(const ProbeModel&) const = default;
};

}  // namespace sav
