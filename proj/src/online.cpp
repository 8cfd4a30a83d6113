#include "sav/online.hpp"

#include <cmath>
#include <ostream>

#include "sav/classify.hpp"

namespace sav {

RwmaState rwma_init(std::size_t k, std::size_t horizon, std::uint64_t seed,
                    std::optional<double> epsilon) {
  if (k < 1) throw PreconditionError("rwma needs k >= 1 experts");
  if (horizon < 1) throw PreconditionError("rwma horizon must be >= 1");
  RwmaState s;
  s.weights.assign(k, 1.0 / static_cast<double>(k));
  s.epsilon = epsilon ? *epsilon
                      : std::sqrt(std::log(static_cast<double>(k)) / static_cast<double>(horizon));
  if (!(s.epsilon >= 0.0 && s.epsilon < 1.0)) {
    throw PreconditionError("epsilon must lie in [0, 1)");
  }
  s.horizon = horizon;
  s.rng = Lcg64(seed);
  return s;
}

std::size_t rwma_sample(RwmaState& state) {
  double total = 0.0;
  for (double w : state.weights) total += w;
  const double u = state.rng.uniform() * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < state.weights.size(); ++i) {
    cum += state.weights[i];
    if (u < cum) return i;
  }
  return state.weights.size() - 1;
}

void rwma_update(RwmaState& state, std::span<const std::uint32_t> expert_predictions,
                 std::uint32_t truth) {
  if (state.step >= state.horizon) {
    throw StateError("horizon of " + std::to_string(state.horizon) + " steps exceeded");
  }
  if (expert_predictions.size() != state.weights.size()) {
    throw DimensionError("one prediction per expert required");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < state.weights.size(); ++j) {
    if (expert_predictions[j] != truth) state.weights[j] *= 1.0 - state.epsilon;
    total += state.weights[j];
  }
  for (double& w : state.weights) w /= total;
  ++state.step;
}

RwmaStepResult rwma_step(RwmaState& state, const SavModel& model,
                         const ExampleActivations& example, std::uint32_t truth) {
  if (state.step >= state.horizon) {
    throw StateError("horizon of " + std::to_string(state.horizon) + " steps exceeded");
  }
  if (state.weights.size() != model.k()) throw DimensionError("rwma state size differs from k");
  if (example.payload.size() != model.shape.payload_size()) {
    throw DimensionError("example shape differs from model shape");
  }
  if (truth >= model.num_classes()) throw DataError("truth label outside the vocabulary");
  RwmaStepResult r;
  r.expert_predictions.resize(model.k());
  for (std::size_t j = 0; j < model.k(); ++j) {
    r.expert_predictions[j] =
        nearest_centroid(model.slot_centroids(j), model.num_classes(), model.feature(example, j));
  }
  r.expert = rwma_sample(state);
  r.prediction = r.expert_predictions[r.expert];
  rwma_update(state, r.expert_predictions, truth);
  return r;
}

RwmaRun rwma_run(const SavModel& model, const ActivationStore& stream, std::uint64_t seed,
                 std::optional<double> epsilon) {
  if (stream.examples.empty()) throw PreconditionError("stream is empty");
  model.check_compatible(stream.shape());
  std::vector<std::uint32_t> truth;
  truth.reserve(stream.size());
  for (const auto& ex : stream.examples) {
    try {
      truth.push_back(model.labels.index_of(stream.labels.name(ex.label)));
    } catch (const LookupError&) {
      throw DataError("stream label '" + stream.labels.name(ex.label) +
                      "' is not in the model vocabulary");
    }
  }
  auto state = rwma_init(model.k(), stream.size(), seed, epsilon);
  RwmaRun run;
  run.epsilon = state.epsilon;
  run.trajectory.push_back(state.weights);
  std::size_t hits = 0;
  for (std::size_t t = 0; t < stream.size(); ++t) {
    const auto r = rwma_step(state, model, stream.examples[t], truth[t]);
    run.predictions.push_back(r.prediction);
    run.experts.push_back(r.expert);
    hits += r.prediction == truth[t] ? 1 : 0;
    run.trajectory.push_back(state.weights);
  }
  run.accuracy = static_cast<double>(hits) / static_cast<double>(stream.size());
  return run;
}

void write_trajectory_csv(const RwmaRun& run, std::ostream& os) {
  const std::size_t k = run.trajectory.empty() ? 0 : run.trajectory.front().size();
  os << "step";
  for (std::size_t j = 0; j < k; ++j) os << ",w" << j;
  os << '\n';
  for (std::size_t t = 0; t < run.trajectory.size(); ++t) {
    os << t;
    for (double w : run.trajectory[t]) os << ',' << format_float9(w);
    os << '\n';
  }
}

}  // namespace sav
