#include "sav/core.hpp"

#include <cmath>
#include <unordered_set>

namespace sav {

std::string HeadAddress::to_string() const {
  return "(" + std::to_string(layer) + "," + std::to_string(head) + ")";
}

LabelVocab::LabelVocab(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() < 2) throw ValidationError("label vocabulary needs at least 2 labels");
  std::unordered_set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw ValidationError("empty label name");
    if (!seen.insert(n).second) throw ValidationError("duplicate label '" + n + "'");
  }
}

std::uint32_t LabelVocab::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<std::uint32_t>(i);
  }
  throw LookupError("unknown label '" + name + "'");
}

double cosine_unchecked(std::span<const float> a, std::span<const float> b) noexcept {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < kZeroNormThreshold || nb < kZeroNormThreshold) return 0.0;
  const double c = dot / (na * nb);
  // rounding can push collinear inputs a hair outside [-1, 1]
  return c > 1.0 ? 1.0 : (c < -1.0 ? -1.0 : c);
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_similarity: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
      throw DataError("cosine_similarity: non-finite entry at component " + std::to_string(i));
    }
  }
  return cosine_unchecked(a, b);
}

AttentionVector mean_vector(std::span<const std::span<const float>> vs) {
  if (vs.empty()) throw PreconditionError("mean_vector of an empty list");
  const std::size_t dim = vs.front().size();
  std::vector<double> acc(dim, 0.0);
  for (const auto& v : vs) {
    if (v.size() != dim) throw DimensionError("mean_vector: ragged input");
    for (std::size_t i = 0; i < dim; ++i) acc[i] += v[i];
  }
  AttentionVector out(dim);
  const double n = static_cast<double>(vs.size());
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i] / n);
  return out;
}

AttentionVector mean_vector(const std::vector<AttentionVector>& vs) {
  std::vector<std::span<const float>> views(vs.begin(), vs.end());
  return mean_vector(std::span<const std::span<const float>>(views));
}

}  // namespace sav
