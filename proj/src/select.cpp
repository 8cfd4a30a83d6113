#include "sav/select.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sav/kernels.hpp"

namespace sav {

std::string to_string(UnitKind k) { return k == UnitKind::head ? "head" : "layer"; }

UnitLayout unit_layout(const Shape& shape, UnitKind kind) {
  if (kind == UnitKind::head) return {shape.num_heads(), shape.head_dim};
  return {shape.layers, std::size_t{shape.heads} * shape.head_dim};
}

std::span<const float> CentroidBank::centroid(HeadAddress head, std::size_t cls) const {
  if (kind != UnitKind::head || !shape.contains(head)) {
    throw LookupError("head " + head.to_string() + " not in centroid bank");
  }
  if (cls >= num_classes) throw LookupError("class " + std::to_string(cls) + " not in bank");
  return centroid(shape.head_index(head), cls);
}

std::size_t SavModel::unit_index(std::size_t slot) const {
  const auto& h = heads.at(slot).head;
  return kind == UnitKind::head ? shape.head_index(h) : std::size_t{h.layer};
}

void SavModel::check_compatible(const Shape& store_shape) const {
  for (const auto& s : heads) {
    if (!store_shape.contains(s.head)) {
      throw DimensionError("store lacks selected " + to_string(kind) + " " + s.head.to_string());
    }
  }
  if (!(store_shape == shape)) {
    throw DimensionError("store shape (" + std::to_string(store_shape.layers) + "x" +
                         std::to_string(store_shape.heads) + "x" +
                         std::to_string(store_shape.head_dim) + ") differs from model shape (" +
                         std::to_string(shape.layers) + "x" + std::to_string(shape.heads) + "x" +
                         std::to_string(shape.head_dim) + ")");
  }
}

void SavModel::check() const {
  const auto layout = unit_layout(shape, kind);
  if (heads.empty() || heads.size() > layout.count) {
    throw ModelFormatError("k = " + std::to_string(heads.size()) + " outside [1, " +
                           std::to_string(layout.count) + "]");
  }
  if (labels.size() < 2) throw ModelFormatError("label vocabulary needs at least 2 labels");
  std::set<HeadAddress> seen;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const auto& s = heads[i];
    const bool in_range = kind == UnitKind::head ? shape.contains(s.head)
                                                 : (s.head.layer < shape.layers && s.head.head == 0);
    if (!in_range) throw ModelFormatError("unit " + s.head.to_string() + " out of range");
    if (!seen.insert(s.head).second) {
      throw ModelFormatError("duplicate unit " + s.head.to_string());
    }
    if (s.correct > s.total) throw ModelFormatError("correct > total for " + s.head.to_string());
    if (i > 0) {
      const auto& p = heads[i - 1];
      if (p.correct < s.correct || (p.correct == s.correct && p.head > s.head)) {
        throw ModelFormatError("heads not in canonical score order");
      }
    }
  }
  if (centroids.size() != heads.size() * labels.size() * layout.width) {
    throw ModelFormatError("centroid payload size mismatch");
  }
  for (float v : centroids) {
    if (!std::isfinite(v)) throw ModelFormatError("non-finite centroid component");
  }
  if (probe) {
    if (probe->input_width != heads.size() * layout.width || probe->classes != labels.size()) {
      throw ModelFormatError("probe shape does not match the selected units");
    }
    probe->check();
  }
}

void ProbeModel::check() const {
  if (w1.size() != hidden * input_width || b1.size() != hidden || w2.size() != classes * hidden ||
      b2.size() != classes) {
    throw ModelFormatError("probe layer shapes inconsistent");
  }
  for (const auto* v : {&w1, &b1, &w2, &b2}) {
    for (double x : *v) {
      if (!std::isfinite(x)) throw ModelFormatError("non-finite probe parameter");
    }
  }
}

std::uint32_t nearest_centroid(std::span<const float> centroids, std::size_t num_classes,
                               std::span<const float> vec, std::span<double> sims) {
  const std::size_t width = vec.size();
  std::uint32_t best = 0;
  double best_sim = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double s = cosine_unchecked(vec, centroids.subspan(c * width, width));
    if (!sims.empty()) sims[c] = s;
    if (c == 0 || s > best_sim) {
      best = static_cast<std::uint32_t>(c);
      best_sim = s;
    }
  }
  return best;
}

CentroidBank build_centroids(const ActivationStore& support, UnitKind kind) {
  CentroidBank bank;
  bank.shape = support.shape();
  bank.kind = kind;
  bank.layout = unit_layout(bank.shape, kind);
  bank.num_classes = support.labels.size();
  bank.class_counts = support.class_counts();
  for (std::size_t c = 0; c < bank.num_classes; ++c) {
    if (bank.class_counts[c] == 0) {
      throw PreconditionError("class '" + support.labels.name(c) + "' has no support examples");
    }
  }
  bank.data.assign(bank.layout.count * bank.num_classes * bank.layout.width, 0.0f);
  kernels::omp::centroids(support, bank.layout, bank.data);
  return bank;
}

std::uint32_t head_prediction(HeadAddress head, const CentroidBank& bank,
                              std::span<const float> vec) {
  if (bank.kind != UnitKind::head || !bank.shape.contains(head)) {
    throw LookupError("head " + head.to_string() + " not in centroid bank");
  }
  if (vec.size() != bank.layout.width) {
    throw DimensionError("vector length " + std::to_string(vec.size()) + ", head_dim " +
                         std::to_string(bank.layout.width));
  }
  return nearest_centroid(bank.unit_centroids(bank.shape.head_index(head)), bank.num_classes, vec);
}

namespace {

void check_bank_matches(const ActivationStore& support, const CentroidBank& bank) {
  if (!(support.shape() == bank.shape) || support.labels.size() != bank.num_classes ||
      unit_layout(support.shape(), bank.kind).width != bank.layout.width) {
    throw DimensionError("support store and centroid bank have different shapes");
  }
}

HeadAddress unit_address(const Shape& shape, UnitKind kind, std::size_t unit) {
  if (kind == UnitKind::head) return shape.head_at(unit);
  return {static_cast<std::uint32_t>(unit), 0};
}

}  // namespace

std::vector<HeadScore> score_heads(const ActivationStore& support, const CentroidBank& bank,
                                   ScoreMode mode) {
  check_bank_matches(support, bank);
  const auto correct = kernels::omp::score(support, bank, mode);
  std::vector<HeadScore> out(correct.size());
  for (std::size_t u = 0; u < correct.size(); ++u) {
    out[u] = {unit_address(bank.shape, bank.kind, u), correct[u],
              static_cast<std::uint32_t>(support.size())};
  }
  return out;
}

std::vector<HeadScore> rank_heads(std::span<const HeadScore> scores) {
  std::vector<HeadScore> ranked(scores.begin(), scores.end());
  std::sort(ranked.begin(), ranked.end(), [](const HeadScore& a, const HeadScore& b) {
    if (a.correct != b.correct) return a.correct > b.correct;
    return a.head < b.head;
  });
  return ranked;
}

SavModel select_heads(std::span<const HeadScore> scores, const CentroidBank& bank,
                      const LabelVocab& labels, std::size_t k) {
  if (k < 1 || k > bank.layout.count) {
    throw PreconditionError("k = " + std::to_string(k) + " outside [1, " +
                            std::to_string(bank.layout.count) + "]");
  }
  if (scores.size() != bank.layout.count) {
    throw DimensionError("expected " + std::to_string(bank.layout.count) + " scores, got " +
                         std::to_string(scores.size()));
  }
  if (labels.size() != bank.num_classes) throw DimensionError("label count differs from bank");
  auto ranked = rank_heads(scores);
  ranked.resize(k);

  SavModel model;
  model.kind = bank.kind;
  model.shape = bank.shape;
  model.labels = labels;
  model.heads = std::move(ranked);
  const std::size_t stride = bank.num_classes * bank.layout.width;
  model.centroids.reserve(k * stride);
  for (std::size_t slot = 0; slot < k; ++slot) {
    const auto block = bank.unit_centroids(model.unit_index(slot));
    model.centroids.insert(model.centroids.end(), block.begin(), block.end());
  }
  return model;
}

SavModel fit_model(const ActivationStore& support, const SelectConfig& config) {
  const auto bank = build_centroids(support, config.kind);
  const auto scores = score_heads(support, bank, config.mode);
  auto model = select_heads(scores, bank, support.labels, config.k);
  model.provenance = {config.shots_per_label, config.seed, store_digest(support)};
  return model;
}

// ---------------------------------------------------------------------------
// JSON persistence. Written by hand so every float uses exactly "%.9g";
// parsed with nlohmann::json.

std::string format_float9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

namespace {

template <typename T>
void write_array(std::ostream& os, std::span<const T> values) {
  os << '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) os << ',';
    os << format_float9(static_cast<double>(values[i]));
  }
  os << ']';
}

const nlohmann::json& require(const nlohmann::json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw ModelFormatError(std::string("missing \"") + key + "\" key");
  }
  return j.at(key);
}

template <typename T>
T get_as(const nlohmann::json& j, const char* key) {
  const auto& v = require(j, key);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ModelFormatError(std::string("\"") + key + "\" has the wrong type");
  }
}

template <typename T>
std::vector<T> number_array(const nlohmann::json& j, const char* key, std::size_t expected) {
  const auto& v = require(j, key);
  if (!v.is_array() || v.size() != expected) {
    throw ModelFormatError(std::string("\"") + key + "\" must be an array of " +
                           std::to_string(expected) + " numbers");
  }
  std::vector<T> out;
  out.reserve(expected);
  for (const auto& x : v) {
    if (!x.is_number()) throw ModelFormatError(std::string("non-numeric entry in \"") + key + "\"");
    out.push_back(static_cast<T>(x.get<double>()));
  }
  return out;
}

}  // namespace

void save_model(const SavModel& model, std::ostream& os) {
  model.check();
  os << "{\n";
  os << "  \"version\": " << SavModel::kFormatVersion << ",\n";
  os << "  \"unit\": \"" << to_string(model.kind) << "\",\n";
  os << "  \"layers\": " << model.shape.layers << ",\n";
  os << "  \"heads_per_layer\": " << model.shape.heads << ",\n";
  os << "  \"head_dim\": " << model.shape.head_dim << ",\n";
  os << "  \"labels\": " << nlohmann::json(model.labels.names()).dump() << ",\n";
  os << "  \"provenance\": {\"shots_per_label\": " << model.provenance.shots_per_label
     << ", \"seed\": " << model.provenance.seed
     << ", \"source_digest\": " << nlohmann::json(model.provenance.source_digest).dump() << "},\n";
  os << "  \"heads\": [\n";
  for (std::size_t i = 0; i < model.heads.size(); ++i) {
    const auto& h = model.heads[i];
    os << "    {\"layer\": " << h.head.layer << ", \"head\": " << h.head.head
       << ", \"correct\": " << h.correct << ", \"total\": " << h.total << "}"
       << (i + 1 < model.heads.size() ? ",\n" : "\n");
  }
  os << "  ],\n";
  os << "  \"centroids\": [\n";
  const std::size_t width = model.width();
  for (std::size_t slot = 0; slot < model.k(); ++slot) {
    os << "    [\n";
    const auto block = model.slot_centroids(slot);
    for (std::size_t c = 0; c < model.num_classes(); ++c) {
      os << "      ";
      write_array(os, block.subspan(c * width, width));
      os << (c + 1 < model.num_classes() ? ",\n" : "\n");
    }
    os << "    ]" << (slot + 1 < model.k() ? ",\n" : "\n");
  }
  os << "  ]";
  if (model.probe) {
    const auto& p = *model.probe;
    os << ",\n  \"alternate\": {\n";
    os << "    \"kind\": \"probe\", \"input_width\": " << p.input_width
       << ", \"hidden\": " << p.hidden << ", \"classes\": " << p.classes << ",\n";
    os << "    \"w1\": ";
    write_array<double>(os, p.w1);
    os << ",\n    \"b1\": ";
    write_array<double>(os, p.b1);
    os << ",\n    \"w2\": ";
    write_array<double>(os, p.w2);
    os << ",\n    \"b2\": ";
    write_array<double>(os, p.b2);
    os << "\n  }";
  }
  os << "\n}\n";
  if (!os) throw IoError("failed writing model");
}

SavModel load_model(std::istream& is) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ModelFormatError(std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ModelFormatError("top level must be an object");
  if (get_as<std::uint32_t>(j, "version") != SavModel::kFormatVersion) {
    throw ModelFormatError("unsupported model version");
  }
  SavModel m;
  const auto unit = get_as<std::string>(j, "unit");
  if (unit == "head") {
    m.kind = UnitKind::head;
  } else if (unit == "layer") {
    m.kind = UnitKind::layer;
  } else {
    throw ModelFormatError("unknown unit \"" + unit + "\"");
  }
  m.shape.layers = get_as<std::uint32_t>(j, "layers");
  m.shape.heads = get_as<std::uint32_t>(j, "heads_per_layer");
  m.shape.head_dim = get_as<std::uint32_t>(j, "head_dim");
  if (m.shape.layers == 0 || m.shape.heads == 0 || m.shape.head_dim == 0 ||
      m.shape.layers > kMaxExtent || m.shape.heads > kMaxExtent || m.shape.head_dim > kMaxExtent) {
    throw ModelFormatError("model shape out of range");
  }
  try {
    m.labels = LabelVocab(get_as<std::vector<std::string>>(j, "labels"));
  } catch (const ValidationError& e) {
    throw ModelFormatError(e.what());
  }
  if (j.contains("provenance")) {
    const auto& p = j.at("provenance");
    m.provenance.shots_per_label = get_as<std::uint32_t>(p, "shots_per_label");
    m.provenance.seed = get_as<std::uint64_t>(p, "seed");
    m.provenance.source_digest = get_as<std::string>(p, "source_digest");
  }
  const auto& heads = require(j, "heads");
  if (!heads.is_array()) throw ModelFormatError("\"heads\" must be an array");
  for (const auto& h : heads) {
    m.heads.push_back({{get_as<std::uint32_t>(h, "layer"), get_as<std::uint32_t>(h, "head")},
                       get_as<std::uint32_t>(h, "correct"),
                       get_as<std::uint32_t>(h, "total")});
  }
  const auto& cents = require(j, "centroids");
  if (!cents.is_array() || cents.size() != m.heads.size()) {
    throw ModelFormatError("\"centroids\" must hold one block per selected unit");
  }
  const std::size_t width = m.width();
  for (const auto& block : cents) {
    if (!block.is_array() || block.size() != m.labels.size()) {
      throw ModelFormatError("centroid block must hold one vector per class");
    }
    for (const auto& vec : block) {
      if (!vec.is_array() || vec.size() != width) {
        throw ModelFormatError("centroid vector length differs from unit width");
      }
      for (const auto& x : vec) {
        if (!x.is_number()) throw ModelFormatError("non-numeric centroid component");
        m.centroids.push_back(static_cast<float>(x.get<double>()));
      }
    }
  }
  if (j.contains("alternate")) {
    const auto& a = j.at("alternate");
    if (get_as<std::string>(a, "kind") != "probe") {
      throw ModelFormatError("unknown alternate kind");
    }
    ProbeModel p;
    p.input_width = get_as<std::size_t>(a, "input_width");
    p.hidden = get_as<std::size_t>(a, "hidden");
    p.classes = get_as<std::size_t>(a, "classes");
    if (p.input_width > kMaxExtent || p.hidden > kMaxExtent || p.classes > kMaxExtent) {
      throw ModelFormatError("probe dimensions out of range");
    }
    p.w1 = number_array<double>(a, "w1", p.hidden * p.input_width);
    p.b1 = number_array<double>(a, "b1", p.hidden);
    p.w2 = number_array<double>(a, "w2", p.classes * p.hidden);
    p.b2 = number_array<double>(a, "b2", p.classes);
    m.probe = std::move(p);
  }
  m.check();
  return m;
}

void save_model_file(const SavModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  save_model(model, os);
}

SavModel load_model_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  return load_model(is);
}

}  // namespace sav
