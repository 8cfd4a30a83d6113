#pragma once

// Data-parallel kernels behind the selection and classification paths.
// Each kernel has an OpenMP version (used by the library) and a plain serial
// reference with a different loop order; tests and the benchmark compare the
// two. Both produce bit-identical results for any thread count.

#include <cstdint>
#include <span>
#include <vector>

#include "sav/classify.hpp"
#include "sav/select.hpp"
#include "sav/store.hpp"

namespace sav::kernels {

namespace serial {

// out is [unit][class][width]; means accumulate in double, in store order.
void centroids(const ActivationStore& support, const UnitLayout& layout, std::span<float> out);

std::vector<std::uint32_t> score(const ActivationStore& support, const CentroidBank& bank,
                                 ScoreMode mode);

std::vector<Prediction> classify(const HeadVoter& voter, const SavModel& model,
                                 const ActivationStore& query);

}  // namespace serial

namespace omp {

void centroids(const ActivationStore& support, const UnitLayout& layout, std::span<float> out);

std::vector<std::uint32_t> score(const ActivationStore& support, const CentroidBank& bank,
                                 ScoreMode mode);

std::vector<Prediction> classify(const HeadVoter& voter, const SavModel& model,
                                 const ActivationStore& query);

}  // namespace omp

// Number of OpenMP worker threads; 0 leaves the runtime default.
void set_num_threads(int jobs);
int max_threads();

}  // namespace sav::kernels
