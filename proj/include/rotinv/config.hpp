#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "rotinv/dataset.hpp"
#include "rotinv/network.hpp"

namespace rotinv {

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch = 16;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  /// Global gradient-norm clip applied to the batch-averaged gradient; 0 disables.
  double grad_clip = 0.0;
  /// Evaluation repeats, each with fresh test rotations.
  std::size_t repeats = 3;
  /// Emit a diagnostics record every this many optimizer steps.
  std::size_t diagnostics_every = 1;
  std::uint64_t seed = 0;
};

struct RunConfig {
  net::ModelConfig model;
  TrainConfig train;
  DatasetSpec data;
};

/// Parse `key = value` lines ('#' starts a comment). Recognized keys:
///
///   preset            named row (t4r1..t4r6, t5r1..t5r3, t6r1..t6r4, identity, full);
///                     applied before every other key regardless of position
///   frame             identity | handcrafted | gram-schmidt | lcrf
///   rpr               off | coordinate | handcrafted-ppf | equivariant | invariant
///   fusion            off | attention
///   lambda_orth, lambda_consist       loss weights (>= 0)
///   orth_variant      signed | squared
///   vn_widths, inv_widths             comma-separated channel counts
///   k, head_channels, fusion_width, classifier_hidden, gate_hidden, classes
///   seed              model initialization and training stream
///   epochs, batch, lr, momentum, weight_decay, grad_clip, repeats, diagnostics_every
///   points, train_per_class, test_per_class, data_seed, jitter
///
/// Unknown keys throw std::invalid_argument naming the line.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Apply a single key; shared by the file parser and CLI overrides.
void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

/// Text form accepted by parse_config.
std::string to_config_text(const RunConfig& cfg);

/// Reduced sizes used by the built-in property suite so that every training
/// criterion fits the single-core time budget.
RunConfig desk_profile();

}  // namespace rotinv
