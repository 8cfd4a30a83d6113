#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "sav/select.hpp"
#include "sav/store.hpp"

namespace sav {

/// Per-class vote counts plus per-class summed similarity over every voting
/// unit (tie-break evidence).
struct VoteTally {
  std::vector<std::uint32_t> votes;
  std::vector<double> similarity;

  explicit VoteTally(std::size_t num_classes = 0)
      : votes(num_classes, 0), similarity(num_classes, 0.0) {}

  // Most votes, then largest summed similarity, then lowest class index.
  std::uint32_t winner() const;
  std::uint32_t total_votes() const;
};

struct Prediction {
  std::uint64_t example_id = 0;
  std::uint32_t predicted = 0;
  std::uint32_t label = 0;  // ground truth carried through for reporting
  VoteTally tally;
};

/// A local classifier for each selected unit (slot). Vote aggregation only
/// sees this contract, so swapping centroid for KNN leaves it untouched.
class HeadVoter {
 public:
  virtual ~HeadVoter() = default;
  virtual std::size_t num_classes() const = 0;
  // Returns the slot's class vote; adds per-class evidence into `evidence`.
  virtual std::uint32_t vote(std::size_t slot, std::span<const float> vec,
                             std::span<double> evidence) const = 0;
};

/// Nearest-centroid voting with cosine similarity.
class CentroidVoter final : public HeadVoter {
 public:
  explicit CentroidVoter(const SavModel& model) : model_(model) {}
  std::size_t num_classes() const override { return model_.num_classes(); }
  std::uint32_t vote(std::size_t slot, std::span<const float> vec,
                     std::span<double> evidence) const override;

 private:
  const SavModel& model_;
};

Prediction classify_example(const HeadVoter& voter, const SavModel& model,
                            const ExampleActivations& example);
Prediction classify_example(const SavModel& model, const ExampleActivations& example);

struct ClassifyResult {
  std::vector<Prediction> predictions;  // ordered by example_id
  double accuracy = 0.0;
};

ClassifyResult classify_store(const HeadVoter& voter, const SavModel& model,
                              const ActivationStore& query);
ClassifyResult classify_store(const SavModel& model, const ActivationStore& query);

/// Layer-sparsification alternate: layers are scored and selected exactly
/// like heads, using concatenated head outputs as the feature.
SavModel build_layer_model(const ActivationStore& support, std::size_t n_layers = 2,
                           ScoreMode mode = ScoreMode::leave_one_in);

/// One JSON object per line: example_id, predicted, label, votes.
void write_predictions_jsonl(const ClassifyResult& result, const LabelVocab& labels,
                             std::ostream& sink);

}  // namespace sav
