#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "sav/rng.hpp"
#include "sav/select.hpp"
#include "sav/store.hpp"

namespace sav {

/// Randomized weighted majority over the k selected heads (one expert each).
struct RwmaState {
  std::vector<double> weights;  // normalized; sums to 1
  double epsilon = 0.0;
  std::size_t step = 0;
  std::size_t horizon = 0;
  Lcg64 rng{0};
};

/// Uniform weights and epsilon = sqrt(ln k / horizon) unless overridden.
RwmaState rwma_init(std::size_t k, std::size_t horizon, std::uint64_t seed,
                    std::optional<double> epsilon = std::nullopt);

/// Inverse-CDF draw of an expert index proportional to the weights.
std::size_t rwma_sample(RwmaState& state);

/// Multiplies every expert whose prediction differs from `truth` by
/// (1 - epsilon), then renormalizes and advances the step.
void rwma_update(RwmaState& state, std::span<const std::uint32_t> expert_predictions,
                 std::uint32_t truth);

struct RwmaStepResult {
  std::uint32_t prediction = 0;
  std::size_t expert = 0;
  std::vector<std::uint32_t> expert_predictions;
};

/// One round: sample an expert, output its nearest-centroid prediction, then
/// penalize every head that was wrong.
RwmaStepResult rwma_step(RwmaState& state, const SavModel& model,
                         const ExampleActivations& example, std::uint32_t truth);

struct RwmaRun {
  double accuracy = 0.0;
  double epsilon = 0.0;
  std::vector<std::uint32_t> predictions;
  std::vector<std::size_t> experts;
  std::vector<std::vector<double>> trajectory;  // row t = weights before step t; last row final
  std::vector<double> final_weights() const { return trajectory.back(); }
};

/// Sequential pass over the stream in store order with horizon = stream size.
RwmaRun rwma_run(const SavModel& model, const ActivationStore& stream, std::uint64_t seed,
                 std::optional<double> epsilon = std::nullopt);

/// CSV: "step,w0,...,w{k-1}", one row per trajectory entry.
void write_trajectory_csv(const RwmaRun& run, std::ostream& sink);

}  // namespace sav
