#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sav/errors.hpp"

namespace sav {

/// One attention head, addressed by (layer, head). Ordered lexicographically.
struct HeadAddress {
  std::uint32_t layer = 0;
  std::uint32_t head = 0;

  auto operator<=>(const HeadAddress&) const = default;
  std::string to_string() const;
};

/// Per-head output vector at the captured token. Stored as float32.
using AttentionVector = std::vector<float>;

/// Model geometry shared by stores and models: L layers, H heads per layer,
/// head_dim components per head.
struct Shape {
  std::uint32_t layers = 0;
  std::uint32_t heads = 0;
  std::uint32_t head_dim = 0;

  bool operator==(const Shape&) const = default;

  std::size_t num_heads() const { return std::size_t{layers} * heads; }
  std::size_t payload_size() const { return num_heads() * head_dim; }
  bool contains(HeadAddress h) const { return h.layer < layers && h.head < heads; }
  // Flat index of a head in layer-major, head-minor order.
  std::size_t head_index(HeadAddress h) const { return std::size_t{h.layer} * heads + h.head; }
  HeadAddress head_at(std::size_t index) const {
    return {static_cast<std::uint32_t>(index / heads), static_cast<std::uint32_t>(index % heads)};
  }
  std::size_t head_offset(HeadAddress h) const { return head_index(h) * head_dim; }
};

/// Ordered, distinct label names; the class index is the position.
class LabelVocab {
 public:
  LabelVocab() = default;
  explicit LabelVocab(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t cls) const { return names_.at(cls); }
  const std::vector<std::string>& names() const { return names_; }
  // Throws LookupError for unknown names.
  std::uint32_t index_of(const std::string& name) const;

  bool operator==(const LabelVocab&) const = default;

 private:
  std::vector<std::string> names_;
};

/// One labeled example: a flat payload holding every head's vector in
/// layer-major, head-major, component order.
struct ExampleActivations {
  std::uint64_t example_id = 0;
  std::uint32_t label = 0;
  std::vector<float> payload;

  std::span<const float> head(const Shape& shape, HeadAddress h) const {
    return std::span<const float>(payload).subspan(shape.head_offset(h), shape.head_dim);
  }
  // All heads of one layer, concatenated in head order.
  std::span<const float> layer(const Shape& shape, std::uint32_t layer) const {
    const std::size_t width = std::size_t{shape.heads} * shape.head_dim;
    return std::span<const float>(payload).subspan(std::size_t{layer} * width, width);
  }
};

/// a.b / (|a||b|) accumulated in double. Returns 0 when either norm < 1e-12.
/// Throws DimensionError on length mismatch, DataError on non-finite input.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// Unchecked variant for inner loops whose inputs were validated upstream.
double cosine_unchecked(std::span<const float> a, std::span<const float> b) noexcept;

/// Elementwise mean with in-order double accumulation.
AttentionVector mean_vector(std::span<const std::span<const float>> vs);
AttentionVector mean_vector(const std::vector<AttentionVector>& vs);

constexpr double kZeroNormThreshold = 1e-12;

}  // namespace sav
