#include "sav/classify.hpp"

#include <algorithm>
#include <ostream>

#include "json.hpp"
#include "sav/kernels.hpp"

namespace sav {

std::uint32_t VoteTally::winner() const {
  std::uint32_t best = 0;
  for (std::size_t c = 1; c < votes.size(); ++c) {
    if (votes[c] > votes[best] || (votes[c] == votes[best] && similarity[c] > similarity[best])) {
      best = static_cast<std::uint32_t>(c);
    }
  }
  return best;
}

std::uint32_t VoteTally::total_votes() const {
  std::uint32_t t = 0;
  for (auto v : votes) t += v;
  return t;
}

std::uint32_t CentroidVoter::vote(std::size_t slot, std::span<const float> vec,
                                  std::span<double> evidence) const {
  const std::size_t c = model_.num_classes();
  double sims[64];
  std::vector<double> heap;
  std::span<double> s;
  if (c <= 64) {
    s = std::span<double>(sims, c);
  } else {
    heap.resize(c);
    s = heap;
  }
  const auto pred = nearest_centroid(model_.slot_centroids(slot), c, vec, s);
  for (std::size_t i = 0; i < c; ++i) evidence[i] += s[i];
  return pred;
}

Prediction classify_example(const HeadVoter& voter, const SavModel& model,
                            const ExampleActivations& example) {
  if (example.payload.size() != model.shape.payload_size()) {
    throw DimensionError("example " + std::to_string(example.example_id) + " has " +
                         std::to_string(example.payload.size()) +
                         " components; model expects " +
                         std::to_string(model.shape.payload_size()) + " (first selected unit " +
                         model.heads.at(0).head.to_string() + ")");
  }
  const std::size_t num_classes = model.num_classes();
  Prediction p;
  p.example_id = example.example_id;
  p.label = example.label;
  p.tally = VoteTally(num_classes);
  std::vector<double> evidence(num_classes);
  for (std::size_t slot = 0; slot < model.k(); ++slot) {
    std::fill(evidence.begin(), evidence.end(), 0.0);
    const auto v = voter.vote(slot, model.feature(example, slot), evidence);
    ++p.tally.votes[v];
    for (std::size_t c = 0; c < num_classes; ++c) p.tally.similarity[c] += evidence[c];
  }
  p.predicted = p.tally.winner();
  return p;
}

Prediction classify_example(const SavModel& model, const ExampleActivations& example) {
  return classify_example(CentroidVoter(model), model, example);
}

namespace {

// Maps query label indices onto the model vocabulary by name.
std::vector<std::uint32_t> label_map(const SavModel& model, const ActivationStore& query) {
  std::vector<std::uint32_t> map(query.labels.size());
  for (std::size_t c = 0; c < query.labels.size(); ++c) {
    try {
      map[c] = model.labels.index_of(query.labels.name(c));
    } catch (const LookupError&) {
      throw DataError("query label '" + query.labels.name(c) + "' is not in the model vocabulary");
    }
  }
  return map;
}

}  // namespace

ClassifyResult classify_store(const HeadVoter& voter, const SavModel& model,
                              const ActivationStore& query) {
  if (query.examples.empty()) throw PreconditionError("query store is empty");
  model.check_compatible(query.shape());
  const auto map = label_map(model, query);
  ClassifyResult r;
  r.predictions = kernels::omp::classify(voter, model, query);
  std::size_t hits = 0;
  for (auto& p : r.predictions) {
    p.label = map[p.label];
    hits += p.predicted == p.label ? 1 : 0;
  }
  std::stable_sort(r.predictions.begin(), r.predictions.end(),
                   [](const Prediction& a, const Prediction& b) { return a.example_id < b.example_id; });
  r.accuracy = static_cast<double>(hits) / static_cast<double>(r.predictions.size());
  return r;
}

ClassifyResult classify_store(const SavModel& model, const ActivationStore& query) {
  return classify_store(CentroidVoter(model), model, query);
}

SavModel build_layer_model(const ActivationStore& support, std::size_t n_layers, ScoreMode mode) {
  if (n_layers < 1 || n_layers > support.shape().layers) {
    throw PreconditionError("n_layers = " + std::to_string(n_layers) + " outside [1, " +
                            std::to_string(support.shape().layers) + "]");
  }
  SelectConfig cfg;
  cfg.k = n_layers;
  cfg.mode = mode;
  cfg.kind = UnitKind::layer;
  return fit_model(support, cfg);
}

void write_predictions_jsonl(const ClassifyResult& result, const LabelVocab& labels,
                             std::ostream& sink) {
  for (const auto& p : result.predictions) {
    nlohmann::ordered_json votes = nlohmann::ordered_json::object();
    for (std::size_t c = 0; c < p.tally.votes.size(); ++c) votes[labels.name(c)] = p.tally.votes[c];
    nlohmann::ordered_json line;
    line["example_id"] = p.example_id;
    line["predicted"] = labels.name(p.predicted);
    line["label"] = labels.name(p.label);
    line["votes"] = std::move(votes);
    sink << line.dump() << '\n';
  }
}

}  // namespace sav
