#pragma once

// Acceptance properties with oracles that do not reuse the code under test:
// brute-force neighbor search, central finite differences, hand-rolled
// rotation algebra. Used by `rotinv check` and the acceptance test binary.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "rotinv/autodiff.hpp"
#include "rotinv/config.hpp"
#include "rotinv/experiment.hpp"
#include "rotinv/geometry.hpp"

namespace rotinv::checks {

struct CriterionResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct SuiteOptions {
  /// Seed of the random instances drawn by the non-training properties.
  std::uint64_t seed = 7;
  /// Sizes and schedule of every training run.
  RunConfig profile = desk_profile();
  /// Paired seeds of the training properties (model, data and schedule).
  std::vector<std::uint64_t> training_seeds{1, 2, 3};
  bool include_training = true;
  /// Progress lines; null for silence.
  std::ostream* log = nullptr;
  /// When set, every training report is appended here as a JSON line.
  std::ostream* reports = nullptr;
};

/// Names of every criterion, in run order.
std::vector<std::string> criterion_names();

CriterionResult check_orthogonality(std::uint64_t seed, std::size_t pairs = 100000);
CriterionResult check_equivariance(std::uint64_t seed, const RunConfig& profile, std::size_t pairs = 100);
CriterionResult check_end_to_end_invariance(std::uint64_t seed, const RunConfig& profile,
                                            std::size_t rotations = 50);
CriterionResult check_consistency_identity(std::uint64_t seed, std::size_t samples = 10000);
CriterionResult check_gradients(std::uint64_t seed);
CriterionResult check_derivation_residuals(std::uint64_t seed, std::size_t pairs = 10000);
CriterionResult check_knn_oracle(std::uint64_t seed, std::size_t clouds = 200);

/// Paired training runs behind the three training criteria.
struct TrainingStudy {
  std::vector<std::uint64_t> seeds;
  // Full model and identity-frame baseline trained with z rotations, each
  // evaluated under z and SO(3) test rotations on the same weights.
  std::vector<RunReport> full_z, full_so3, identity_z, identity_so3;
  // Aggregation-only row (gram-schmidt, no RPR) at lambda_consist 0.1 and 0, z/SO(3).
  std::vector<RunReport> row2, row2_no_consistency;
  double rotation_gap_seconds = 0.0;
};

TrainingStudy run_training_study(const SuiteOptions& options);

CriterionResult check_rotation_gap_pattern(const TrainingStudy& study);
CriterionResult check_ablation_pattern(const TrainingStudy& study);
CriterionResult check_consistency_training(const TrainingStudy& study);

/// Every criterion; training ones are skipped (and omitted) unless enabled.
std::vector<CriterionResult> run_suite(const SuiteOptions& options);

std::string format_result(const CriterionResult& r);

// ---- gradient checking -------------------------------------------------------

struct GradientReport {
  double max_relative_error = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int smooth_directions = 0;
  int kinks_skipped = 0;
};

/// Compares the backward pass of `loss` with central differences along
/// `directions` random directions in the joint space of `leaves` (which must
/// require gradients). Relative error |a - n| / max(|a|, |n|, 1e-6).
/// When the one-sided slopes disagree (a kink inside the segment) or the
/// central difference moves under a 10x smaller step, the step shrinks up to
/// 10^4 x; failing that, the direction is redrawn, up to ten
/// times the requested count.
GradientReport directional_gradient_check(std::vector<ad::Tensor> leaves,
                                          const std::function<ad::Tensor()>& loss, Rng& rng,
                                          int directions = 3, double step = 1e-4);

}  // namespace rotinv::checks
