#include "sav/harness.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "sav/alternates.hpp"
#include "sav/online.hpp"
#include "sav/rng.hpp"
#include "sav/synth.hpp"

namespace sav {

std::string to_string(Method m) {
  switch (m) {
    case Method::centroid: return "centroid";
    case Method::knn: return "knn";
    case Method::probe: return "probe";
    case Method::layers: return "layers";
    case Method::rwma: return "rwma";
  }
  return "unknown";
}

Method method_from_string(const std::string& s) {
  for (auto m : {Method::centroid, Method::knn, Method::probe, Method::layers, Method::rwma}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown method '" + s + "' (expected centroid|knn|probe|layers|rwma)");
}

namespace {

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.error_class(), std::string(name) + ": " + e.what());
  }
}

}  // namespace

EvalReport run_eval(const ActivationStore& support, const ActivationStore& query,
                    const EvalConfig& config) {
  if (!(support.shape() == query.shape())) {
    throw DimensionError("support and query stores have different shapes");
  }
  EvalReport rep;
  rep.task = config.task;
  rep.method = config.method;
  rep.config = config;
  rep.n_support = support.size();
  rep.n_query = query.size();

  SavModel model;
  if (config.method == Method::layers) {
    rep.unit = UnitKind::layer;
    const auto bank = stage("centroids", [&] { return build_centroids(support, UnitKind::layer); });
    rep.scores = stage("score", [&] { return score_heads(support, bank, config.mode); });
    model = stage("select", [&] {
      if (config.n_layers < 1 || config.n_layers > support.shape().layers) {
        throw PreconditionError("n_layers = " + std::to_string(config.n_layers) + " outside [1, " +
                                std::to_string(support.shape().layers) + "]");
      }
      return select_heads(rep.scores, bank, support.labels, config.n_layers);
    });
  } else {
    const auto bank = stage("centroids", [&] { return build_centroids(support, UnitKind::head); });
    rep.scores = stage("score", [&] { return score_heads(support, bank, config.mode); });
    model = stage("select", [&] { return select_heads(rep.scores, bank, support.labels, config.k); });
  }
  rep.selected = model.heads;

  rep.result = stage("classify", [&]() -> ClassifyResult {
    switch (config.method) {
      case Method::centroid:
      case Method::layers:
        return classify_store(model, query);
      case Method::knn:
        if (config.knn_mode == KnnMode::pooled) {
          return classify_store_pooled_knn(support, model, query, config.kappa);
        } else {
          const auto bank = build_knn_bank(support, model, config.kappa);
          return classify_store(KnnVoter(bank), model, query);
        }
      case Method::probe: {
        ProbeConfig pc;
        pc.epochs = config.epochs;
        pc.seed = config.seed;
        const auto probe = train_probe(support, model, pc);
        return classify_store_probe(probe, model, query);
      }
      case Method::rwma: {
        const auto run = rwma_run(model, query, config.seed, config.epsilon);
        ClassifyResult r;
        r.accuracy = run.accuracy;
        for (std::size_t i = 0; i < query.size(); ++i) {
          Prediction p;
          p.example_id = query.examples[i].example_id;
          p.label = model.labels.index_of(query.labels.name(query.examples[i].label));
          p.predicted = run.predictions[i];
          p.tally = VoteTally(model.num_classes());
          p.tally.votes[p.predicted] = 1;
          r.predictions.push_back(std::move(p));
        }
        return r;
      }
    }
    throw ConfigError("unhandled method");
  });
  rep.accuracy = rep.result.accuracy;
  if (config.method == Method::knn) {
    rep.notes.push_back(config.knn_mode == KnnMode::pooled ? "knn-pooled" : "knn-per-head");
  }
  if (config.group_size > 1) rep.notes.push_back("icl-analog");
  if (config.distractors > 0) rep.notes.push_back("distractors");
  if (config.mode == ScoreMode::leave_one_out) rep.notes.push_back("leave-one-out");
  return rep;
}

StoreSplit prepare_split(const ActivationStore& store, const EvalConfig& config) {
  auto split = stage("split", [&] { return split_store(store, config.shots, config.seed); });
  if (config.distractors > 0) {
    split.support =
        stage("noise", [&] { return inject_noise(split.support, config.distractors, config.seed); });
  }
  if (config.group_size > 1) {
    split.support = stage(
        "icl-analog", [&] { return icl_style_support(split.support, config.group_size, config.seed); });
  }
  return split;
}

EvalReport evaluate_store(const ActivationStore& store, const EvalConfig& config) {
  const auto split = prepare_split(store, config);
  return run_eval(split.support, split.query, config);
}

namespace {

template <typename T>
void check_increasing(const std::vector<T>& v, const char* axis) {
  if (v.empty()) throw PreconditionError(std::string(axis) + " sweep needs at least one value");
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i - 1] < v[i])) {
      throw PreconditionError(std::string(axis) + " sweep values must be strictly increasing");
    }
  }
}

}  // namespace

SweepResult sweep_shots(const ActivationStore& store, const std::vector<std::uint32_t>& shots,
                        const EvalConfig& config) {
  check_increasing(shots, "shots");
  if (shots.front() < 1) throw PreconditionError("shots must be >= 1");
  const auto counts = store.class_counts();
  const auto fewest = *std::min_element(counts.begin(), counts.end());
  if (std::size_t{shots.back()} + 1 > fewest) {
    throw PreconditionError("shots = " + std::to_string(shots.back()) +
                            " needs " + std::to_string(shots.back() + 1) +
                            " examples per class; smallest class has " + std::to_string(fewest));
  }
  const auto query = split_store(store, shots.back(), config.seed).query;
  SweepResult out{"shots", {}};
  for (auto s : shots) {
    EvalConfig cfg = config;
    cfg.shots = s;
    auto split = prepare_split(store, cfg);
    const auto rep = run_eval(split.support, query, cfg);
    out.points.push_back({static_cast<double>(s), rep.accuracy, cfg, rep.n_query});
  }
  return out;
}

SweepResult sweep_k(const ActivationStore& store, const std::vector<std::size_t>& ks,
                    const EvalConfig& config) {
  check_increasing(ks, "k");
  if (ks.front() < 1 || ks.back() > store.shape().num_heads()) {
    throw PreconditionError("k values must lie in [1, " +
                            std::to_string(store.shape().num_heads()) + "]");
  }
  const auto split = prepare_split(store, config);
  SweepResult out{"k", {}};
  for (auto k : ks) {
    EvalConfig cfg = config;
    cfg.k = k;
    const auto rep = run_eval(split.support, split.query, cfg);
    out.points.push_back({static_cast<double>(k), rep.accuracy, cfg, rep.n_query});
  }
  return out;
}

SweepResult sweep_distractors(const ActivationStore& store,
                              const std::vector<std::uint32_t>& distractors,
                              const EvalConfig& config) {
  check_increasing(distractors, "distractors");
  SweepResult out{"distractors", {}};
  for (auto d : distractors) {
    EvalConfig cfg = config;
    cfg.distractors = d;
    const auto rep = evaluate_store(store, cfg);
    out.points.push_back({static_cast<double>(d), rep.accuracy, cfg, rep.n_query});
  }
  return out;
}

SeedRobustness seed_robustness(const ActivationStore& store, const std::vector<std::uint64_t>& seeds,
                               const EvalConfig& config) {
  if (seeds.empty()) throw PreconditionError("seed list is empty");
  SeedRobustness out;
  out.runs.axis = "seed";
  for (auto seed : seeds) {
    EvalConfig cfg = config;
    cfg.seed = seed;
    const auto rep = evaluate_store(store, cfg);
    out.runs.points.push_back({static_cast<double>(seed), rep.accuracy, cfg, rep.n_query});
  }
  double sum = 0.0;
  for (const auto& p : out.runs.points) sum += p.accuracy;
  out.mean = sum / static_cast<double>(seeds.size());
  double var = 0.0;
  for (const auto& p : out.runs.points) var += (p.accuracy - out.mean) * (p.accuracy - out.mean);
  out.stddev = std::sqrt(var / static_cast<double>(seeds.size()));
  return out;
}

ActivationStore icl_style_support(const ActivationStore& store, std::uint32_t group_size,
                                  std::uint64_t seed) {
  if (group_size < 1) throw PreconditionError("group_size must be >= 1");
  const auto counts = store.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] % group_size != 0) {
      throw PreconditionError("group_size " + std::to_string(group_size) +
                              " does not divide the " + std::to_string(counts[c]) +
                              " examples of class '" + store.labels.name(c) + "'");
    }
  }
  if (group_size == 1) return store;

  std::vector<std::vector<std::size_t>> members(counts.size());
  for (std::size_t i = 0; i < store.size(); ++i) members[store.examples[i].label].push_back(i);
  Lcg64 rng(seed);
  std::vector<ExampleActivations> pseudo;
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto& idx = members[c];
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return store.examples[a].example_id < store.examples[b].example_id;
    });
    fisher_yates(idx, rng);
    for (std::size_t g = 0; g < idx.size(); g += group_size) {
      std::vector<std::span<const float>> views;
      std::uint64_t id = store.examples[idx[g]].example_id;
      for (std::size_t m = g; m < g + group_size; ++m) {
        views.emplace_back(store.examples[idx[m]].payload);
        id = std::min(id, store.examples[idx[m]].example_id);
      }
      ExampleActivations ex;
      ex.example_id = id;
      ex.label = static_cast<std::uint32_t>(c);
      ex.payload = mean_vector(std::span<const std::span<const float>>(views));
      pseudo.push_back(std::move(ex));
    }
  }
  std::sort(pseudo.begin(), pseudo.end(), [](const auto& a, const auto& b) {
    return a.example_id < b.example_id;
  });
  return with_examples(store, std::move(pseudo));
}

SymmetricEigen jacobi_eigen(std::vector<double> a, std::size_t n, double tolerance) {
  if (a.size() != n * n) throw DimensionError("jacobi_eigen: matrix is not n x n");
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto at = [&](std::size_t r, std::size_t c) -> double& { return a[r * n + c]; };

  double scale = 0.0;
  for (double x : a) scale += x * x;
  scale = std::sqrt(scale);
  const double threshold = tolerance * std::max(1.0, scale);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * at(p, q) * at(p, q);
    }
    if (std::sqrt(off) <= threshold) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return at(x, x) > at(y, y); });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.assign(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.values[j] = at(src, src);
    std::size_t big = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (std::abs(v[i * n + src]) > std::abs(v[big * n + src])) big = i;
    }
    const double sign = v[big * n + src] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) out.vectors[i * n + j] = sign * v[i * n + src];
  }
  return out;
}

std::vector<ProjectionPoint> emit_projection(const SavModel& model, const ActivationStore& store,
                                             std::optional<HeadAddress> head) {
  if (store.examples.empty()) throw PreconditionError("store is empty");
  const Shape& shape = store.shape();
  std::size_t unit;
  UnitLayout layout;
  if (head) {
    if (!shape.contains(*head)) throw LookupError("head " + head->to_string() + " not in store");
    layout = unit_layout(shape, UnitKind::head);
    unit = shape.head_index(*head);
  } else {
    model.check_compatible(shape);
    layout = unit_layout(shape, model.kind);
    unit = model.unit_index(0);
  }
  const std::size_t d = layout.width;
  const std::size_t n = store.size();
  std::vector<double> mean(d, 0.0);
  for (const auto& ex : store.examples) {
    const auto v = unit_span(ex, layout, unit);
    for (std::size_t i = 0; i < d; ++i) mean[i] += v[i];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  std::vector<double> centered(n * d);
  for (std::size_t e = 0; e < n; ++e) {
    const auto v = unit_span(store.examples[e], layout, unit);
    for (std::size_t i = 0; i < d; ++i) centered[e * d + i] = v[i] - mean[i];
  }
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t e = 0; e < n; ++e) {
    const double* x = centered.data() + e * d;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i; j < d; ++j) cov[i * d + j] += x[i] * x[j];
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      cov[i * d + j] /= static_cast<double>(n);
      cov[j * d + i] = cov[i * d + j];
    }
  }
  const auto eig = jacobi_eigen(std::move(cov), d);
  std::vector<ProjectionPoint> out(n);
  for (std::size_t e = 0; e < n; ++e) {
    const double* x = centered.data() + e * d;
    double p1 = 0.0, p2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      p1 += x[i] * eig.vectors[i * d + 0];
      if (d > 1) p2 += x[i] * eig.vectors[i * d + 1];
    }
    out[e] = {store.examples[e].example_id, store.examples[e].label, p1, p2};
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::ordered_json config_json(const EvalConfig& c) {
  nlohmann::ordered_json j;
  j["method"] = to_string(c.method);
  j["k"] = c.k;
  j["shots"] = c.shots;
  j["seed"] = c.seed;
  j["scoring"] = c.mode == ScoreMode::leave_one_in ? "leave-one-in" : "leave-one-out";
  j["kappa"] = c.kappa;
  j["knn_mode"] = c.knn_mode == KnnMode::pooled ? "pooled" : "per-head";
  j["epochs"] = c.epochs;
  j["n_layers"] = c.n_layers;
  if (c.epsilon) j["epsilon"] = *c.epsilon;
  j["distractors"] = c.distractors;
  j["group_size"] = c.group_size;
  return j;
}

nlohmann::ordered_json score_json(const HeadScore& s) {
  return {{"layer", s.head.layer}, {"head", s.head.head}, {"correct", s.correct}, {"total", s.total}};
}

}  // namespace

nlohmann::ordered_json to_json(const EvalReport& r, const LabelVocab& labels) {
  nlohmann::ordered_json j;
  j["task"] = r.task;
  j["method"] = to_string(r.method);
  j["unit"] = to_string(r.unit);
  j["accuracy"] = r.accuracy;
  j["n_support"] = r.n_support;
  j["n_query"] = r.n_query;
  j["config"] = config_json(r.config);
  j["notes"] = r.notes;
  auto sel = nlohmann::ordered_json::array();
  for (const auto& s : r.selected) sel.push_back(score_json(s));
  j["selected"] = std::move(sel);
  auto scores = nlohmann::ordered_json::array();
  for (const auto& s : r.scores) scores.push_back(score_json(s));
  j["scores"] = std::move(scores);
  auto preds = nlohmann::ordered_json::array();
  for (const auto& p : r.result.predictions) {
    nlohmann::ordered_json pj;
    pj["example_id"] = p.example_id;
    pj["predicted"] = labels.name(p.predicted);
    pj["label"] = labels.name(p.label);
    pj["votes"] = p.tally.votes;
    preds.push_back(std::move(pj));
  }
  j["predictions"] = std::move(preds);
  return j;
}

nlohmann::ordered_json to_json(const SweepResult& sweep) {
  nlohmann::ordered_json j;
  j["axis"] = sweep.axis;
  auto pts = nlohmann::ordered_json::array();
  for (const auto& p : sweep.points) {
    nlohmann::ordered_json pj;
    pj["value"] = p.value;
    pj["accuracy"] = p.accuracy;
    pj["n_query"] = p.n_query;
    pj["config"] = config_json(p.config);
    pts.push_back(std::move(pj));
  }
  j["points"] = std::move(pts);
  return j;
}

void write_sweep_csv(const SweepResult& sweep, std::ostream& os) {
  os << "value,accuracy,axis,method,k,shots,seed,distractors,group_size,n_query\n";
  for (const auto& p : sweep.points) {
    os << format_float9(p.value) << ',' << format_float9(p.accuracy) << ',' << sweep.axis << ','
       << to_string(p.config.method) << ',' << p.config.k << ',' << p.config.shots << ','
       << p.config.seed << ',' << p.config.distractors << ',' << p.config.group_size << ','
       << p.n_query << '\n';
  }
}

void write_projection_csv(const std::vector<ProjectionPoint>& points, const LabelVocab& labels,
                          std::ostream& os) {
  os << "example_id,label,pc1,pc2\n";
  for (const auto& p : points) {
    os << p.example_id << ',' << labels.name(p.label) << ',' << format_float9(p.pc1) << ','
       << format_float9(p.pc2) << '\n';
  }
}

}  // namespace sav
