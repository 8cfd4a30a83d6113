#include "sav/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "sav/rng.hpp"

namespace sav {

void PlantSpec::check() const {
  if (shape.layers < 1 || shape.heads < 1 || shape.head_dim < 1) {
    throw PreconditionError("layers, heads and head_dim must be >= 1");
  }
  if (num_classes < 2) throw PreconditionError("need at least 2 classes");
  if (num_classes > shape.head_dim) {
    throw PreconditionError("cannot place " + std::to_string(num_classes) +
                            " orthogonal class means in head_dim " +
                            std::to_string(shape.head_dim));
  }
  if (examples_per_class < 1) throw PreconditionError("examples_per_class must be >= 1");
  if (!(separation >= 0.0) || !std::isfinite(separation)) {
    throw PreconditionError("separation must be >= 0");
  }
  if (!(noise_std > 0.0) || !std::isfinite(noise_std)) {
    throw PreconditionError("noise_std must be > 0");
  }
  std::set<HeadAddress> seen;
  for (const auto& h : planted) {
    if (!shape.contains(h)) throw PreconditionError("planted head " + h.to_string() + " out of range");
    if (!seen.insert(h).second) throw PreconditionError("planted head " + h.to_string() + " repeated");
  }
}

PlantSpec plant_spec_from_json(const nlohmann::json& j) {
  PlantSpec s;
  try {
    s.shape.layers = j.at("layers").get<std::uint32_t>();
    s.shape.heads = j.at("heads").get<std::uint32_t>();
    s.shape.head_dim = j.at("head_dim").get<std::uint32_t>();
    s.num_classes = j.at("classes").get<std::uint32_t>();
    s.examples_per_class = j.at("examples_per_class").get<std::uint32_t>();
    for (const auto& h : j.at("planted")) {
      s.planted.push_back({h.at(0).get<std::uint32_t>(), h.at(1).get<std::uint32_t>()});
    }
    s.separation = j.at("separation").get<double>();
    s.noise_std = j.value("noise_std", 1.0);
    s.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("plant spec: ") + e.what());
  }
  return s;
}

nlohmann::json to_json(const PlantSpec& s) {
  nlohmann::json planted = nlohmann::json::array();
  for (const auto& h : s.planted) planted.push_back({h.layer, h.head});
  return {{"layers", s.shape.layers},
          {"heads", s.shape.heads},
          {"head_dim", s.shape.head_dim},
          {"classes", s.num_classes},
          {"examples_per_class", s.examples_per_class},
          {"planted", planted},
          {"separation", s.separation},
          {"noise_std", s.noise_std},
          {"seed", s.seed}};
}

namespace {

// Modified Gram-Schmidt over `count` rows of length `dim`, in place.
void orthonormalize(std::vector<double>& rows, std::size_t count, std::size_t dim) {
  for (std::size_t r = 0; r < count; ++r) {
    double* v = rows.data() + r * dim;
    for (std::size_t q = 0; q < r; ++q) {
      const double* u = rows.data() + q * dim;
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += v[i] * u[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * u[i];
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < dim; ++i) norm += v[i] * v[i];
    norm = std::sqrt(norm);
    if (norm < 1e-9) throw Error(ErrorClass::internal, "degenerate Gram-Schmidt draw");
    for (std::size_t i = 0; i < dim; ++i) v[i] /= norm;
  }
}

}  // namespace

ActivationStore generate(const PlantSpec& spec) { return generate_with_means(spec).store; }

PlantedStore generate_with_means(const PlantSpec& spec) {
  spec.check();
  const Shape& shape = spec.shape;
  const std::size_t dim = shape.head_dim;
  const std::size_t num_classes = spec.num_classes;
  const std::set<HeadAddress> planted(spec.planted.begin(), spec.planted.end());
  Lcg64 rng(spec.seed);

  // means[head][class][dim]; non-planted heads repeat one shared mean.
  std::vector<double> means(shape.num_heads() * num_classes * dim);
  const double radius = spec.separation * spec.noise_std / std::sqrt(2.0);
  std::vector<double> rows(num_classes * dim);
  for (std::size_t h = 0; h < shape.num_heads(); ++h) {
    double* dst = means.data() + h * num_classes * dim;
    if (planted.count(shape.head_at(h))) {
      for (auto& x : rows) x = rng.normal();
      orthonormalize(rows, num_classes, dim);
      for (std::size_t i = 0; i < rows.size(); ++i) dst[i] = radius * rows[i];
    } else {
      for (std::size_t i = 0; i < dim; ++i) dst[i] = spec.noise_std * rng.normal();
      for (std::size_t c = 1; c < num_classes; ++c) std::copy_n(dst, dim, dst + c * dim);
    }
  }

  std::vector<std::string> names;
  for (std::size_t c = 0; c < num_classes; ++c) names.push_back("class" + std::to_string(c));

  std::vector<ExampleActivations> examples;
  examples.reserve(std::size_t{spec.examples_per_class} * num_classes);
  for (std::size_t round = 0; round < spec.examples_per_class; ++round) {
    for (std::size_t c = 0; c < num_classes; ++c) {
      ExampleActivations ex;
      ex.example_id = round * num_classes + c;
      ex.label = static_cast<std::uint32_t>(c);
      ex.payload.resize(shape.payload_size());
      for (std::size_t h = 0; h < shape.num_heads(); ++h) {
        const double* mu = means.data() + (h * num_classes + c) * dim;
        float* out = ex.payload.data() + h * dim;
        for (std::size_t i = 0; i < dim; ++i) {
          out[i] = static_cast<float>(mu[i] + spec.noise_std * rng.normal());
        }
      }
      examples.push_back(std::move(ex));
    }
  }
  return {make_store(shape, LabelVocab(std::move(names)), std::move(examples)), std::move(means)};
}

ActivationStore inject_noise(const ActivationStore& store, std::uint32_t distractors_per_class,
                             std::uint64_t seed) {
  const std::size_t num_classes = store.labels.size();
  const auto counts = store.class_counts();
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (distractors_per_class >= counts[c]) {
      throw PreconditionError(std::to_string(distractors_per_class) +
                              " distractors requested but class '" + store.labels.name(c) +
                              "' has only " + std::to_string(counts[c]) + " examples");
    }
  }
  ActivationStore out = store;
  if (distractors_per_class == 0) return out;
  Lcg64 rng(seed);
  const std::size_t shift = 1 + rng.below(num_classes - 1);
  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < store.size(); ++i) members[store.examples[i].label].push_back(i);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& idx = members[c];
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return store.examples[a].example_id < store.examples[b].example_id;
    });
    fisher_yates(idx, rng);
    const auto wrong = static_cast<std::uint32_t>((c + shift) % num_classes);
    for (std::size_t r = 0; r < distractors_per_class; ++r) out.examples[idx[r]].label = wrong;
  }
  return out;
}

std::vector<HeadAddress> random_heads(const Shape& shape, std::size_t count, std::uint64_t seed) {
  if (count > shape.num_heads()) throw PreconditionError("more planted heads than heads");
  std::vector<std::size_t> all(shape.num_heads());
  std::iota(all.begin(), all.end(), std::size_t{0});
  Lcg64 rng(seed);
  fisher_yates(all, rng);
  all.resize(count);
  std::sort(all.begin(), all.end());
  std::vector<HeadAddress> out;
  for (auto i : all) out.push_back(shape.head_at(i));
  return out;
}

}  // namespace sav
