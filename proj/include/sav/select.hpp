#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sav/core.hpp"
#include "sav/probe_model.hpp"
#include "sav/store.hpp"

namespace sav {

/// What a scored/selected unit is: a single head, or a whole layer whose
/// feature is its heads concatenated in head order.
enum class UnitKind { head, layer };

std::string to_string(UnitKind k);

struct UnitLayout {
  std::size_t count = 0;
  std::size_t width = 0;
};

UnitLayout unit_layout(const Shape& shape, UnitKind kind);

/// Feature of unit `unit` within an example payload. Units are contiguous
/// slices because the payload is layer-major then head-major.
inline std::span<const float> unit_span(const ExampleActivations& ex, const UnitLayout& layout,
                                        std::size_t unit) {
  return std::span<const float>(ex.payload).subspan(unit * layout.width, layout.width);
}

/// Per-unit, per-class mean vectors over a support store.
struct CentroidBank {
  Shape shape;
  UnitKind kind = UnitKind::head;
  UnitLayout layout;
  std::size_t num_classes = 0;
  std::vector<std::size_t> class_counts;
  std::vector<float> data;  // [unit][class][width]

  std::span<const float> unit_centroids(std::size_t unit) const {
    return std::span<const float>(data).subspan(unit * num_classes * layout.width,
                                                num_classes * layout.width);
  }
  std::span<const float> centroid(std::size_t unit, std::size_t cls) const {
    return unit_centroids(unit).subspan(cls * layout.width, layout.width);
  }
  std::span<const float> centroid(HeadAddress head, std::size_t cls) const;
};

struct HeadScore {
  HeadAddress head;  // for layer units, head is always 0
  std::uint32_t correct = 0;
  std::uint32_t total = 0;

  bool operator==(const HeadScore&) const = default;
};

enum class ScoreMode { leave_one_in, leave_one_out };

struct Provenance {
  std::uint32_t shots_per_label = 0;
  std::uint64_t seed = 0;
  std::string source_digest;

  bool operator==(const Provenance&) const = default;
};

/// The k selected units with their scores and per-class centroids.
struct SavModel {
  static constexpr std::uint32_t kFormatVersion = 1;

  UnitKind kind = UnitKind::head;
  Shape shape;
  LabelVocab labels;
  std::vector<HeadScore> heads;  // sorted: correct desc, layer asc, head asc
  std::vector<float> centroids;  // [slot][class][width]
  Provenance provenance;
  std::optional<ProbeModel> probe;

  std::size_t k() const { return heads.size(); }
  std::size_t num_classes() const { return labels.size(); }
  std::size_t width() const { return unit_layout(shape, kind).width; }
  std::size_t unit_index(std::size_t slot) const;
  std::span<const float> slot_centroids(std::size_t slot) const {
    const std::size_t stride = num_classes() * width();
    return std::span<const float>(centroids).subspan(slot * stride, stride);
  }
  // Selected unit's feature in an example of the same shape.
  std::span<const float> feature(const ExampleActivations& ex, std::size_t slot) const {
    return unit_span(ex, unit_layout(shape, kind), unit_index(slot));
  }
  // Throws DimensionError naming the first selected head the store lacks.
  void check_compatible(const Shape& store_shape) const;
  void check() const;
};

/// Index of the most similar centroid; ties go to the lowest class index.
/// `centroids` is [class][width]; `sims` (optional) receives every similarity.
std::uint32_t nearest_centroid(std::span<const float> centroids, std::size_t num_classes,
                               std::span<const float> vec, std::span<double> sims = {});

CentroidBank build_centroids(const ActivationStore& support, UnitKind kind = UnitKind::head);

std::uint32_t head_prediction(HeadAddress head, const CentroidBank& bank,
                              std::span<const float> vec);

/// Scores every unit in canonical (layer, head) order. In leave-one-in mode
/// each example's own vector is part of the centroids it is scored against.
std::vector<HeadScore> score_heads(const ActivationStore& support, const CentroidBank& bank,
                                   ScoreMode mode = ScoreMode::leave_one_in);

/// Canonical ranking: correct descending, then layer, then head ascending.
std::vector<HeadScore> rank_heads(std::span<const HeadScore> scores);

SavModel select_heads(std::span<const HeadScore> scores, const CentroidBank& bank,
                      const LabelVocab& labels, std::size_t k);

struct SelectConfig {
  std::size_t k = 20;
  ScoreMode mode = ScoreMode::leave_one_in;
  UnitKind kind = UnitKind::head;
  std::uint32_t shots_per_label = 0;  // provenance only
  std::uint64_t seed = 0;             // provenance only
};

/// build_centroids -> score_heads -> select_heads over a support store.
SavModel fit_model(const ActivationStore& support, const SelectConfig& config);

void save_model(const SavModel& model, std::ostream& sink);
SavModel load_model(std::istream& source);
void save_model_file(const SavModel& model, const std::filesystem::path& path);
SavModel load_model_file(const std::filesystem::path& path);

/// Shortest "%.9g" rendering used for every serialized float.
std::string format_float9(double v);

}  // namespace sav
