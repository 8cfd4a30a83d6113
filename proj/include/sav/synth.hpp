#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "sav/core.hpp"
#include "sav/store.hpp"

namespace sav {

/// Recipe for a synthetic store whose informative heads are known.
struct PlantSpec {
  Shape shape;
  std::uint32_t num_classes = 2;
  std::uint32_t examples_per_class = 0;
  std::vector<HeadAddress> planted;
  double separation = 0.0;  // distance between class means, in noise_std units
  double noise_std = 1.0;
  std::uint64_t seed = 0;

  // Throws PreconditionError when the spec cannot be generated.
  void check() const;
};

/// JSON form: {"layers","heads","head_dim","classes","examples_per_class",
/// "planted":[[layer,head],...],"separation","noise_std","seed"}. "seed" is
/// optional here so callers can supply it separately.
PlantSpec plant_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PlantSpec& spec);

/// Planted heads: class c ~ mu_c + N(0, noise_std^2 I) with mutually
/// orthogonal mu_c at pairwise distance separation * noise_std. Other heads:
/// one shared random mean plus the same noise for every class.
///
/// Generator call order: for each head in (layer, head) order, planted heads
/// draw num_classes x head_dim normals (Gram-Schmidt orthonormalized), other
/// heads draw head_dim normals for the shared mean. Then examples are emitted
/// round-robin over classes (id = round * C + class), each drawing head_dim
/// noise normals per head in (layer, head) order.
ActivationStore generate(const PlantSpec& spec);

/// generate() plus the class means it drew, [head][class][head_dim].
struct PlantedStore {
  ActivationStore store;
  std::vector<double> means;
};
PlantedStore generate_with_means(const PlantSpec& spec);

/// Per class, relabels `distractors_per_class` randomly chosen examples to
/// one wrong class. Wrong classes are a random cyclic shift (c -> c + r mod C,
/// 1 <= r < C), so every class also receives exactly one group of strays.
ActivationStore inject_noise(const ActivationStore& store, std::uint32_t distractors_per_class,
                             std::uint64_t seed);

/// Random planted-head subset of the given size, drawn with the shared generator.
std::vector<HeadAddress> random_heads(const Shape& shape, std::size_t count, std::uint64_t seed);

}  // namespace sav
