#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sav/classify.hpp"
#include "sav/select.hpp"
#include "sav/store.hpp"

namespace sav {

enum class Method { centroid, knn, probe, layers, rwma };
enum class KnnMode { per_head, pooled };

std::string to_string(Method m);
Method method_from_string(const std::string& s);  // ConfigError if unknown

struct EvalConfig {
  std::string task = "task";
  Method method = Method::centroid;
  std::size_t k = 20;
  std::uint32_t shots = 20;
  std::uint64_t seed = 0;
  ScoreMode mode = ScoreMode::leave_one_in;
  std::size_t kappa = 5;
  KnnMode knn_mode = KnnMode::per_head;
  std::size_t epochs = 20;
  std::size_t n_layers = 2;
  std::optional<double> epsilon;  // rwma override
  std::uint32_t distractors = 0;  // per class, applied to the support split
  std::uint32_t group_size = 1;   // icl-analog grouping of the support split
};

struct EvalReport {
  std::string task;
  Method method = Method::centroid;
  UnitKind unit = UnitKind::head;
  double accuracy = 0.0;
  std::size_t n_support = 0;
  std::size_t n_query = 0;
  EvalConfig config;
  std::vector<HeadScore> scores;    // every unit, canonical order
  std::vector<HeadScore> selected;  // model order
  ClassifyResult result;
  std::vector<std::string> notes;
};

/// End-to-end on an explicit support/query pair.
EvalReport run_eval(const ActivationStore& support, const ActivationStore& query,
                    const EvalConfig& config);

/// The support/query pair a config implies for a full store: seeded split,
/// then distractors, then icl-analog grouping on the support side.
StoreSplit prepare_split(const ActivationStore& store, const EvalConfig& config);

/// prepare_split + run_eval.
EvalReport evaluate_store(const ActivationStore& store, const EvalConfig& config);

struct SweepPoint {
  double value = 0.0;
  double accuracy = 0.0;
  EvalConfig config;  // effective config of this point
  std::size_t n_query = 0;
};

struct SweepResult {
  std::string axis;  // "shots" | "k" | "distractors" | "seed"
  std::vector<SweepPoint> points;
};

/// Nested supports: every point draws its support with the same seed, and all
/// points share the query set left over by the largest shot count.
SweepResult sweep_shots(const ActivationStore& store, const std::vector<std::uint32_t>& shots,
                        const EvalConfig& config);
SweepResult sweep_k(const ActivationStore& store, const std::vector<std::size_t>& ks,
                    const EvalConfig& config);
SweepResult sweep_distractors(const ActivationStore& store,
                              const std::vector<std::uint32_t>& distractors,
                              const EvalConfig& config);

struct SeedRobustness {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  SweepResult runs;
};

SeedRobustness seed_robustness(const ActivationStore& store, const std::vector<std::uint64_t>& seeds,
                               const EvalConfig& config);

/// Replaces each class's examples with per-head means of seeded groups of
/// `group_size` examples. Pseudo-examples take the smallest id in the group.
ActivationStore icl_style_support(const ActivationStore& store, std::uint32_t group_size,
                                  std::uint64_t seed);

struct ProjectionPoint {
  std::uint64_t example_id = 0;
  std::uint32_t label = 0;
  double pc1 = 0.0;
  double pc2 = 0.0;
};

/// Symmetric eigendecomposition by cyclic Jacobi rotations. Returns
/// eigenvalues descending; eigenvectors as columns of a row-major matrix,
/// each signed so its largest-magnitude component is positive.
struct SymmetricEigen {
  std::vector<double> values;
  std::vector<double> vectors;  // n x n, column j pairs with values[j]
};
SymmetricEigen jacobi_eigen(std::vector<double> matrix, std::size_t n, double tolerance = 1e-10);

/// Top-2 principal-component coordinates of one unit's vectors over a store.
/// Defaults to the model's best unit.
std::vector<ProjectionPoint> emit_projection(const SavModel& model, const ActivationStore& store,
                                             std::optional<HeadAddress> head = std::nullopt);

nlohmann::ordered_json to_json(const EvalReport& report, const LabelVocab& labels);
nlohmann::ordered_json to_json(const SweepResult& sweep);

void write_sweep_csv(const SweepResult& sweep, std::ostream& sink);
void write_projection_csv(const std::vector<ProjectionPoint>& points, const LabelVocab& labels,
                          std::ostream& sink);

}  // namespace sav
