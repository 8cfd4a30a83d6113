// Serial reference kernels. Loop order deliberately differs from the OpenMP
// versions (examples outermost) while keeping every per-component summation
// in the same order, so results must match bit for bit.

#include <algorithm>

#include "kernel_detail.hpp"
#include "sav/kernels.hpp"

namespace sav::kernels::serial {

void centroids(const ActivationStore& support, const UnitLayout& layout, std::span<float> out) {
  const std::size_t num_classes = support.labels.size();
  const auto counts = support.class_counts();
  std::vector<double> sums(layout.count * num_classes * layout.width, 0.0);
  for (const auto& ex : support.examples) {
    for (std::size_t u = 0; u < layout.count; ++u) {
      const auto v = unit_span(ex, layout, u);
      double* dst = sums.data() + (u * num_classes + ex.label) * layout.width;
      for (std::size_t i = 0; i < layout.width; ++i) dst[i] += v[i];
    }
  }
  const std::size_t stride = num_classes * layout.width;
  for (std::size_t u = 0; u < layout.count; ++u) {
    detail::finish_centroids(std::span<const double>(sums).subspan(u * stride, stride), counts,
                             layout.width, out.subspan(u * stride, stride));
  }
}

std::vector<std::uint32_t> score(const ActivationStore& support, const CentroidBank& bank,
                                 ScoreMode mode) {
  const auto& layout = bank.layout;
  std::vector<std::uint32_t> correct(layout.count, 0);
  std::vector<double> sums;
  std::vector<float> scratch(layout.width);
  if (mode == ScoreMode::leave_one_out) {
    const std::size_t stride = bank.num_classes * layout.width;
    sums.resize(layout.count * stride);
    for (std::size_t u = 0; u < layout.count; ++u) {
      detail::unit_class_sums(support, layout, u, std::span<double>(sums).subspan(u * stride, stride));
    }
  }
  for (const auto& ex : support.examples) {
    for (std::size_t u = 0; u < layout.count; ++u) {
      const auto v = unit_span(ex, layout, u);
      std::uint32_t pred;
      if (mode == ScoreMode::leave_one_in) {
        pred = nearest_centroid(bank.unit_centroids(u), bank.num_classes, v);
      } else {
        const std::size_t stride = bank.num_classes * layout.width;
        pred = detail::predict_leave_one_out(bank.unit_centroids(u),
                                             std::span<const double>(sums).subspan(u * stride, stride),
                                             bank.class_counts, v, ex.label, scratch);
      }
      correct[u] += pred == ex.label ? 1U : 0U;
    }
  }
  return correct;
}

std::vector<Prediction> classify(const HeadVoter& voter, const SavModel& model,
                                 const ActivationStore& query) {
  const std::size_t num_classes = model.num_classes();
  std::vector<Prediction> out(query.size());
  for (std::size_t i = 0; i < query.size(); ++i) {
    out[i].example_id = query.examples[i].example_id;
    out[i].label = query.examples[i].label;
    out[i].tally = VoteTally(num_classes);
  }
  std::vector<double> evidence(num_classes);
  for (std::size_t slot = 0; slot < model.k(); ++slot) {
    for (std::size_t i = 0; i < query.size(); ++i) {
      std::fill(evidence.begin(), evidence.end(), 0.0);
      const auto v = voter.vote(slot, model.feature(query.examples[i], slot), evidence);
      auto& tally = out[i].tally;
      ++tally.votes[v];
      for (std::size_t c = 0; c < num_classes; ++c) tally.similarity[c] += evidence[c];
    }
  }
  for (auto& p : out) p.predicted = p.tally.winner();
  return out;
}

}  // namespace sav::kernels::serial
