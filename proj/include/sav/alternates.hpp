#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sav/classify.hpp"
#include "sav/probe_model.hpp"
#include "sav/select.hpp"
#include "sav/store.hpp"

namespace sav {

// ---------------------------------------------------------------------------
// k-nearest-neighbour local classifiers

/// Support vectors of every selected unit, for per-unit KNN voting.
struct KnnBank {
  std::size_t kappa = 5;
  std::size_t num_classes = 0;
  std::size_t width = 0;
  std::vector<HeadAddress> heads;      // model slot order
  std::vector<std::uint64_t> ids;      // support example ids
  std::vector<std::uint32_t> labels;   // support labels
  std::vector<std::vector<float>> vectors;  // per slot: [example][width]

  std::size_t support_size() const { return ids.size(); }
  std::size_t slot_of(HeadAddress head) const;  // LookupError when absent
};

KnnBank build_knn_bank(const ActivationStore& support, const SavModel& model, std::size_t kappa = 5);

/// Modal label among the kappa most cosine-similar support vectors.
/// Neighbour ties go to the lower example id; label ties to the lower class.
std::uint32_t knn_predict(std::span<const float> vectors, std::span<const std::uint32_t> labels,
                          std::span<const std::uint64_t> ids, std::size_t num_classes,
                          std::size_t kappa, std::span<const float> vec,
                          std::span<double> evidence = {});

std::uint32_t knn_head_prediction(const KnnBank& bank, HeadAddress head, std::span<const float> vec);

/// Per-slot KNN behind the shared voting contract. Evidence is each class's
/// summed neighbour similarity.
class KnnVoter final : public HeadVoter {
 public:
  explicit KnnVoter(const KnnBank& bank) : bank_(bank) {}
  std::size_t num_classes() const override { return bank_.num_classes; }
  std::uint32_t vote(std::size_t slot, std::span<const float> vec,
                     std::span<double> evidence) const override;

 private:
  const KnnBank& bank_;
};

/// Single KNN over the concatenation of all selected units (no voting).
ClassifyResult classify_store_pooled_knn(const ActivationStore& support, const SavModel& model,
                                         const ActivationStore& query, std::size_t kappa);

// ---------------------------------------------------------------------------
// MLP probe over concatenated selected-unit features

struct ProbeConfig {
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  double step_size = 0.01;
  std::size_t hidden = ProbeModel::kDefaultHidden;
};

/// Concatenated selected-unit features of one example, in model slot order.
std::vector<double> probe_features(const SavModel& model, const ExampleActivations& example);

/// Glorot-uniform weights from the shared generator (w1 then w2, row-major),
/// zero biases.
ProbeModel init_probe(std::size_t input_width, std::size_t hidden, std::size_t classes,
                      std::uint64_t seed);

std::vector<double> probe_logits(const ProbeModel& probe, std::span<const double> x);

/// Mean softmax cross-entropy over a batch and its gradient, packed in the
/// same layout as the parameters (w1, b1, w2, b2 concatenated).
struct ProbeLoss {
  double loss = 0.0;
  std::vector<double> gradient;
};

ProbeLoss probe_loss_and_gradient(const ProbeModel& probe, std::span<const double> features,
                                  std::span<const std::uint32_t> labels);

/// Parameters as one flat vector (w1, b1, w2, b2) and back.
std::vector<double> flatten_params(const ProbeModel& probe);
void unflatten_params(ProbeModel& probe, std::span<const double> flat);

/// Full-batch gradient descent on the support store's selected-unit features.
ProbeModel train_probe(const ActivationStore& support, const SavModel& model,
                       const ProbeConfig& config);

std::uint32_t probe_predict(const ProbeModel& probe, std::span<const double> features);
std::uint32_t probe_predict(const ProbeModel& probe, const SavModel& model,
                            const ExampleActivations& example);

ClassifyResult classify_store_probe(const ProbeModel& probe, const SavModel& model,
                                    const ActivationStore& query);

}  // namespace sav
