#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "rotinv/config.hpp"
#include "rotinv/dataset.hpp"
#include "rotinv/network.hpp"

namespace rotinv {

enum class RotationMode { none, z, so3 };

std::string_view to_string(RotationMode m);

/// Identity for `none`, a uniform angle about z for `z`, Haar for `so3`.
Rotation sample_rotation(RotationMode mode, Rng& rng);

/// Train-time and test-time rotation distributions.
struct Protocol {
  RotationMode train = RotationMode::z;
  RotationMode test = RotationMode::so3;

  /// "zz", "zso3" or "so3so3".
  static Protocol parse(std::string_view name);
  std::string name() const;
};

/// One optimizer-step diagnostics record.
struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0, ce_inv = 0.0, ce_eqv = 0.0, ce_fused = 0.0, orth = 0.0, consist = 0.0;
  double consistency_axis1 = 0.0, consistency_axis2 = 0.0;
  double orthogonality_residual = 0.0;
  /// Max relative logit change of the first batch cloud under one random SO(3) rotation.
  double invariance_defect = 0.0;
  std::size_t degenerate_points = 0;
};

struct EvalResult {
  double accuracy = 0.0;
  double consistency_axis1 = 0.0;
  double consistency_axis2 = 0.0;
  std::size_t degenerate_points = 0;
};

struct RunReport {
  std::string row;
  RunConfig config;
  Protocol protocol;
  std::vector<double> epoch_loss;
  std::vector<StepRecord> diagnostics;
  std::vector<double> repeat_accuracy;
  double accuracy = 0.0;
  double consistency_axis1 = 0.0;
  double consistency_axis2 = 0.0;
  std::size_t degenerate_points = 0;
  double seconds = 0.0;
  bool diverged = false;
  std::string message;

  /// Single-line JSON; wall time is the only non-replayable field.
  std::string to_json() const;
};

std::string to_json(const StepRecord& r);

/// Per-sample test rotation for (rotation seed, repeat, index); independent of
/// the model, so every configuration sees the same test set.
Rotation test_rotation(RotationMode mode, std::uint64_t seed, std::size_t repeat,
                       std::size_t index);

/// Accuracy and mean test-set frame consistency under one repeat of test rotations.
EvalResult evaluate(const net::Model& model, const std::vector<PointCloud>& test,
                    RotationMode mode, std::uint64_t rotation_seed, std::size_t repeat);

struct TrainedRun {
  net::Model model;
  RunReport report;
};

/// Train with SGD and cosine annealing under `protocol.train`, then evaluate
/// `config.train.repeats` times under `protocol.test`. A non-finite value
/// stops training and marks the report diverged; evaluation is then skipped.
/// When `diagnostics` is given each StepRecord is also written as a JSON line.
TrainedRun train_and_evaluate(const RunConfig& config, const Protocol& protocol,
                              const SyntheticDataset& data, std::ostream* diagnostics = nullptr);

RunReport run_experiment(const RunConfig& config, const Protocol& protocol,
                         const SyntheticDataset& data, std::ostream* diagnostics = nullptr);

/// One report per named preset row; all rows share `base` sizes, data and seed.
std::vector<RunReport> run_ablation_grid(const std::vector<std::string>& rows,
                                         const RunConfig& base, const Protocol& protocol,
                                         const SyntheticDataset& data);

struct PerturbationResult {
  double sigma = 0.0;
  std::size_t dropped = 0;
  double accuracy = 0.0;
};

/// Drop counts for a 1024-point reference rescaled to `points`, rounded.
std::vector<std::size_t> scaled_drops(const std::vector<std::size_t>& reference, std::size_t points);

/// Evaluate a trained model under Gaussian noise (one row per sigma, no drop)
/// and point dropout (one row per count, no noise). The clean row uses the
/// same rotations as `evaluate` and so reproduces its accuracy.
std::vector<PerturbationResult> run_perturbation_sweep(
    const net::Model& model, const std::vector<PointCloud>& test, RotationMode mode,
    std::uint64_t rotation_seed, std::size_t repeats, const std::vector<double>& sigmas,
    const std::vector<std::size_t>& drops);

/// CSV with one row per report: row, protocol, accuracy, std, per-repeat, consistency, seconds, diverged.
std::string summary_csv(const std::vector<RunReport>& reports);

}  // namespace rotinv
