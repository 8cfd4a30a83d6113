#include "sav/alternates.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sav/rng.hpp"

namespace sav {

std::size_t KnnBank::slot_of(HeadAddress head) const {
  for (std::size_t s = 0; s < heads.size(); ++s) {
    if (heads[s] == head) return s;
  }
  throw LookupError("head " + head.to_string() + " not in KNN bank");
}

KnnBank build_knn_bank(const ActivationStore& support, const SavModel& model, std::size_t kappa) {
  if (kappa < 1 || kappa > support.size()) {
    throw PreconditionError("kappa = " + std::to_string(kappa) + " outside [1, " +
                            std::to_string(support.size()) + "]");
  }
  model.check_compatible(support.shape());
  KnnBank bank;
  bank.kappa = kappa;
  bank.num_classes = model.num_classes();
  bank.width = model.width();
  for (const auto& ex : support.examples) {
    bank.ids.push_back(ex.example_id);
    bank.labels.push_back(model.labels.index_of(support.labels.name(ex.label)));
  }
  for (std::size_t slot = 0; slot < model.k(); ++slot) {
    bank.heads.push_back(model.heads[slot].head);
    std::vector<float> block;
    block.reserve(support.size() * bank.width);
    for (const auto& ex : support.examples) {
      const auto f = model.feature(ex, slot);
      block.insert(block.end(), f.begin(), f.end());
    }
    bank.vectors.push_back(std::move(block));
  }
  return bank;
}

std::uint32_t knn_predict(std::span<const float> vectors, std::span<const std::uint32_t> labels,
                          std::span<const std::uint64_t> ids, std::size_t num_classes,
                          std::size_t kappa, std::span<const float> vec,
                          std::span<double> evidence) {
  const std::size_t n = labels.size();
  const std::size_t width = vec.size();
  std::vector<double> sims(n);
  for (std::size_t i = 0; i < n; ++i) sims[i] = cosine_unchecked(vec, vectors.subspan(i * width, width));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = std::min(kappa, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (sims[a] != sims[b]) return sims[a] > sims[b];
                      return ids[a] < ids[b];
                    });
  std::vector<std::uint32_t> counts(num_classes, 0);
  for (std::size_t r = 0; r < take; ++r) {
    const auto i = order[r];
    ++counts[labels[i]];
    if (!evidence.empty()) evidence[labels[i]] += sims[i];
  }
  std::uint32_t best = 0;
  for (std::size_t c = 1; c < num_classes; ++c) {
    if (counts[c] > counts[best]) best = static_cast<std::uint32_t>(c);
  }
  return best;
}

std::uint32_t knn_head_prediction(const KnnBank& bank, HeadAddress head, std::span<const float> vec) {
  const auto slot = bank.slot_of(head);
  if (vec.size() != bank.width) throw DimensionError("KNN query vector length mismatch");
  return knn_predict(bank.vectors[slot], bank.labels, bank.ids, bank.num_classes, bank.kappa, vec);
}

std::uint32_t KnnVoter::vote(std::size_t slot, std::span<const float> vec,
                             std::span<double> evidence) const {
  return knn_predict(bank_.vectors.at(slot), bank_.labels, bank_.ids, bank_.num_classes,
                     bank_.kappa, vec, evidence);
}

namespace {

std::vector<float> pooled_feature(const SavModel& model, const ExampleActivations& ex) {
  std::vector<float> out;
  out.reserve(model.k() * model.width());
  for (std::size_t slot = 0; slot < model.k(); ++slot) {
    const auto f = model.feature(ex, slot);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

ClassifyResult finish(std::vector<Prediction> preds) {
  ClassifyResult r;
  std::size_t hits = 0;
  for (const auto& p : preds) hits += p.predicted == p.label ? 1 : 0;
  std::stable_sort(preds.begin(), preds.end(),
                   [](const Prediction& a, const Prediction& b) { return a.example_id < b.example_id; });
  r.accuracy = preds.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(preds.size());
  r.predictions = std::move(preds);
  return r;
}

std::vector<std::uint32_t> mapped_labels(const SavModel& model, const ActivationStore& store) {
  std::vector<std::uint32_t> out;
  out.reserve(store.size());
  for (const auto& ex : store.examples) {
    try {
      out.push_back(model.labels.index_of(store.labels.name(ex.label)));
    } catch (const LookupError&) {
      throw DataError("label '" + store.labels.name(ex.label) + "' is not in the model vocabulary");
    }
  }
  return out;
}

}  // namespace

ClassifyResult classify_store_pooled_knn(const ActivationStore& support, const SavModel& model,
                                         const ActivationStore& query, std::size_t kappa) {
  if (query.examples.empty()) throw PreconditionError("query store is empty");
  if (kappa < 1 || kappa > support.size()) throw PreconditionError("kappa out of range");
  model.check_compatible(support.shape());
  model.check_compatible(query.shape());
  const auto support_labels = mapped_labels(model, support);
  const auto query_labels = mapped_labels(model, query);
  std::vector<float> bank;
  std::vector<std::uint64_t> ids;
  for (const auto& ex : support.examples) {
    const auto f = pooled_feature(model, ex);
    bank.insert(bank.end(), f.begin(), f.end());
    ids.push_back(ex.example_id);
  }
  std::vector<Prediction> preds(query.size());
  const auto n = static_cast<std::ptrdiff_t>(query.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t qi = 0; qi < n; ++qi) {
    const auto i = static_cast<std::size_t>(qi);
    auto& p = preds[i];
    p.example_id = query.examples[i].example_id;
    p.label = query_labels[i];
    p.tally = VoteTally(model.num_classes());
    p.predicted = knn_predict(bank, support_labels, ids, model.num_classes(), kappa,
                              pooled_feature(model, query.examples[i]), p.tally.similarity);
    p.tally.votes[p.predicted] = 1;
  }
  return finish(std::move(preds));
}

// ---------------------------------------------------------------------------

std::vector<double> probe_features(const SavModel& model, const ExampleActivations& example) {
  std::vector<double> out;
  out.reserve(model.k() * model.width());
  for (std::size_t slot = 0; slot < model.k(); ++slot) {
    const auto f = model.feature(example, slot);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

ProbeModel init_probe(std::size_t input_width, std::size_t hidden, std::size_t classes,
                      std::uint64_t seed) {
  if (input_width < 1 || hidden < 1 || classes < 2) {
    throw PreconditionError("probe needs input >= 1, hidden >= 1, classes >= 2");
  }
  ProbeModel p;
  p.input_width = input_width;
  p.hidden = hidden;
  p.classes = classes;
  Lcg64 rng(seed);
  const double a1 = std::sqrt(6.0 / static_cast<double>(input_width + hidden));
  const double a2 = std::sqrt(6.0 / static_cast<double>(hidden + classes));
  p.w1.resize(hidden * input_width);
  for (auto& w : p.w1) w = a1 * (2.0 * rng.uniform() - 1.0);
  p.b1.assign(hidden, 0.0);
  p.w2.resize(classes * hidden);
  for (auto& w : p.w2) w = a2 * (2.0 * rng.uniform() - 1.0);
  p.b2.assign(classes, 0.0);
  return p;
}

namespace {

void hidden_layer(const ProbeModel& p, std::span<const double> x, std::span<double> pre,
                  std::span<double> act) {
  for (std::size_t h = 0; h < p.hidden; ++h) {
    const double* row = p.w1.data() + h * p.input_width;
    double z = p.b1[h];
    for (std::size_t i = 0; i < p.input_width; ++i) z += row[i] * x[i];
    pre[h] = z;
    act[h] = z > 0.0 ? z : 0.0;
  }
}

void output_layer(const ProbeModel& p, std::span<const double> act, std::span<double> logits) {
  for (std::size_t c = 0; c < p.classes; ++c) {
    const double* row = p.w2.data() + c * p.hidden;
    double z = p.b2[c];
    for (std::size_t h = 0; h < p.hidden; ++h) z += row[h] * act[h];
    logits[c] = z;
  }
}

std::uint32_t argmax_low(std::span<const double> v) {
  std::uint32_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<std::uint32_t>(i);
  }
  return best;
}

}  // namespace

std::vector<double> probe_logits(const ProbeModel& probe, std::span<const double> x) {
  if (x.size() != probe.input_width) {
    throw DimensionError("probe input width " + std::to_string(probe.input_width) + ", got " +
                         std::to_string(x.size()));
  }
  std::vector<double> pre(probe.hidden), act(probe.hidden), logits(probe.classes);
  hidden_layer(probe, x, pre, act);
  output_layer(probe, act, logits);
  return logits;
}

std::vector<double> flatten_params(const ProbeModel& p) {
  std::vector<double> flat;
  flat.reserve(p.num_params());
  for (const auto* v : {&p.w1, &p.b1, &p.w2, &p.b2}) flat.insert(flat.end(), v->begin(), v->end());
  return flat;
}

void unflatten_params(ProbeModel& p, std::span<const double> flat) {
  if (flat.size() != p.num_params()) throw DimensionError("parameter vector size mismatch");
  std::size_t off = 0;
  for (auto* v : {&p.w1, &p.b1, &p.w2, &p.b2}) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), v->size(), v->begin());
    off += v->size();
  }
}

ProbeLoss probe_loss_and_gradient(const ProbeModel& p, std::span<const double> features,
                                  std::span<const std::uint32_t> labels) {
  const std::size_t n = labels.size();
  if (n == 0) throw PreconditionError("empty batch");
  if (features.size() != n * p.input_width) throw DimensionError("feature matrix size mismatch");
  ProbeLoss out;
  out.gradient.assign(p.num_params(), 0.0);
  double* gw1 = out.gradient.data();
  double* gb1 = gw1 + p.w1.size();
  double* gw2 = gb1 + p.b1.size();
  double* gb2 = gw2 + p.w2.size();

  std::vector<double> pre(p.hidden), act(p.hidden), logits(p.classes), dlogit(p.classes),
      dact(p.hidden);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t e = 0; e < n; ++e) {
    const auto x = features.subspan(e * p.input_width, p.input_width);
    if (labels[e] >= p.classes) throw DataError("label outside probe classes");
    hidden_layer(p, x, pre, act);
    output_layer(p, act, logits);
    // stable log-softmax
    const double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (std::size_t c = 0; c < p.classes; ++c) denom += std::exp(logits[c] - mx);
    const double log_denom = std::log(denom) + mx;
    out.loss += (log_denom - logits[labels[e]]) * inv_n;
    for (std::size_t c = 0; c < p.classes; ++c) {
      dlogit[c] = (std::exp(logits[c] - log_denom) - (c == labels[e] ? 1.0 : 0.0)) * inv_n;
    }
    std::fill(dact.begin(), dact.end(), 0.0);
    for (std::size_t c = 0; c < p.classes; ++c) {
      gb2[c] += dlogit[c];
      const double* row = p.w2.data() + c * p.hidden;
      double* grow = gw2 + c * p.hidden;
      for (std::size_t h = 0; h < p.hidden; ++h) {
        grow[h] += dlogit[c] * act[h];
        dact[h] += dlogit[c] * row[h];
      }
    }
    for (std::size_t h = 0; h < p.hidden; ++h) {
      if (pre[h] <= 0.0) continue;
      gb1[h] += dact[h];
      double* grow = gw1 + h * p.input_width;
      for (std::size_t i = 0; i < p.input_width; ++i) grow[i] += dact[h] * x[i];
    }
  }
  return out;
}

ProbeModel train_probe(const ActivationStore& support, const SavModel& model,
                       const ProbeConfig& config) {
  if (config.epochs < 1) throw PreconditionError("epochs must be >= 1");
  if (support.examples.empty()) throw PreconditionError("support store is empty");
  model.check_compatible(support.shape());
  const auto labels = mapped_labels(model, support);
  const std::size_t width = model.k() * model.width();
  std::vector<double> features;
  features.reserve(support.size() * width);
  for (const auto& ex : support.examples) {
    const auto f = probe_features(model, ex);
    features.insert(features.end(), f.begin(), f.end());
  }
  auto probe = init_probe(width, config.hidden, model.num_classes(), config.seed);
  auto params = flatten_params(probe);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto step = probe_loss_and_gradient(probe, features, labels);
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= config.step_size * step.gradient[i];
    unflatten_params(probe, params);
  }
  probe.check();
  return probe;
}

std::uint32_t probe_predict(const ProbeModel& probe, std::span<const double> features) {
  return argmax_low(probe_logits(probe, features));
}

std::uint32_t probe_predict(const ProbeModel& probe, const SavModel& model,
                            const ExampleActivations& example) {
  if (example.payload.size() != model.shape.payload_size()) {
    throw DimensionError("example shape differs from model shape");
  }
  return probe_predict(probe, probe_features(model, example));
}

ClassifyResult classify_store_probe(const ProbeModel& probe, const SavModel& model,
                                    const ActivationStore& query) {
  if (query.examples.empty()) throw PreconditionError("query store is empty");
  model.check_compatible(query.shape());
  if (probe.input_width != model.k() * model.width()) {
    throw DimensionError("probe input width does not match the model's selected units");
  }
  const auto labels = mapped_labels(model, query);
  std::vector<Prediction> preds(query.size());
  const auto n = static_cast<std::ptrdiff_t>(query.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t qi = 0; qi < n; ++qi) {
    const auto i = static_cast<std::size_t>(qi);
    auto& p = preds[i];
    p.example_id = query.examples[i].example_id;
    p.label = labels[i];
    p.tally = VoteTally(model.num_classes());
    const auto logits = probe_logits(probe, probe_features(model, query.examples[i]));
    p.predicted = argmax_low(logits);
    p.tally.votes[p.predicted] = 1;
    p.tally.similarity = logits;
  }
  return finish(std::move(preds));
}

}  // namespace sav
