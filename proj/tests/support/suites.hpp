#pragma once

// Seeded property suites shared by the unit tests and the acceptance runner.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "oracles.hpp"

namespace vmos::suite {

// Per-entry tolerance of the finite-difference checks.
inline constexpr double kGradRelTol = 1e-4;

struct NamedAgreement {
  std::string name;
  oracle::Agreement agreement;
  std::size_t instances = 0;
};

// conv2d, bilinear upsample, ReLU and crop backward passes, plus the three
// head losses through both decoders, each on `instances` random cases.
std::vector<NamedAgreement> gradient_suite(std::size_t instances, std::uint64_t seed);

struct RidgeReport {
  double worst_rel = 0.0;      // |w - w*| / |w*| over all problems
  bool traces_monotone = true;
  std::size_t problems = 0;
};
// Gauss-Newton with W1 frozen against the closed-form weighted ridge solution.
RidgeReport ridge_oracle_suite(std::size_t problems, std::uint64_t seed, SolverPath path = SolverPath::kAuto);

// Instances (out of `instances`) where group_instances disagrees with the
// exhaustive nearest-center labeling or its proposals.
std::size_t grouping_mismatches(std::size_t instances, std::uint64_t seed);

struct SgmReport {
  double worst_sum_error = 0.0;  // max |alpha + beta - 1|
  std::size_t hull_violations = 0;
  std::size_t identity_failures = 0;  // guide(x, x) != x
  std::size_t instances = 0;
};
SgmReport sgm_suite(std::size_t instances, std::uint64_t seed);

struct MemoryReport {
  double worst_weight_error = 0.0;  // vs. the recurrence replay
  double worst_sum_error = 0.0;
  bool schedule_ok = true;  // fires on the 8th unreliable frame and on every reliable one
};
MemoryReport memory_suite(std::uint64_t seed);

// Score matrices (<= 4 x 4) where assign_tracks' total differs from the
// exhaustive best total.
std::size_t assignment_mismatches(std::size_t instances, std::uint64_t seed);

}  // namespace vmos::suite
