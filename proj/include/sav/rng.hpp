#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace sav {

/// 64-bit linear congruential generator shared by every seeded operation.
///
/// state' = state * 6364136223846793005 + 1442695040888963407 (mod 2^64),
/// seeded directly with the user seed. Derived draws use the top 53 bits so
/// that any implementation with 64-bit unsigned arithmetic reproduces them.
class Lcg64 {
 public:
  static constexpr std::uint64_t kMultiplier = 6364136223846793005ULL;
  static constexpr std::uint64_t kIncrement = 1442695040888963407ULL;

  explicit Lcg64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ = state_ * kMultiplier + kIncrement;
    return state_;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe as a log argument.
  double uniform_open_low() { return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const auto r = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    return r < n ? r : n - 1;
  }

  // Standard normal via Box-Muller: one (0,1] draw then one [0,1) draw,
  // returning the cosine branch only. Two generator steps per call.
  double normal() {
    const double u1 = uniform_open_low();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

/// In-place Fisher-Yates: for i = n-1 down to 1, swap i with below(i+1).
template <typename T>
void fisher_yates(std::vector<T>& items, Lcg64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace sav
