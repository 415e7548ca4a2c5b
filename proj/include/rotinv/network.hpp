#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rotinv/autodiff.hpp"
#include "rotinv/frames.hpp"
#include "rotinv/geometry.hpp"
#include "rotinv/optim.hpp"
#include "rotinv/vecneuron.hpp"

namespace rotinv::net {

enum class RprSource { off, coordinate, handcrafted_ppf, equivariant, invariant };
enum class Fusion { off, attention };

std::string_view to_string(RprSource s);
RprSource rpr_source_from_string(std::string_view s);
std::string_view to_string(Fusion f);
Fusion fusion_from_string(std::string_view s);

struct ModelConfig {
  std::string name = "custom";
  frames::FrameKind frame_kind = frames::FrameKind::lcrf;
  RprSource rpr = RprSource::equivariant;
  Fusion fusion = Fusion::attention;
  double lambda_orth = 0.1;
  double lambda_consist = 0.1;
  frames::OrthogonalityVariant orth_variant = frames::OrthogonalityVariant::signed_dot;
  std::vector<std::size_t> vn_widths{16, 32, 64};
  std::vector<std::size_t> inv_widths{64, 64, 128};
  std::size_t k = 16;
  std::size_t num_classes = 4;
  std::size_t head_channels = 4;
  std::size_t fusion_width = 64;
  std::size_t classifier_hidden = 64;
  std::size_t gate_hidden = 32;
  std::uint64_t seed = 0;

  bool learned_frames() const;
  bool needs_equivariant() const;
  /// Throws std::invalid_argument on negative weights or empty widths.
  void validate() const;
};

/// Named ablation rows: t4r1..t4r6 (component ablation), t5r1..t5r3 (frame
/// construction), t6r1..t6r4 (relative pose source), plus "identity"
/// (raw coordinates, no frames) and "full" (= t4r6).
ModelConfig preset(std::string_view name);
std::vector<std::string> preset_names();

/// Affine map x W + b on the last axis.
class Dense {
 public:
  Dense() = default;
  Dense(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out);
  /// Zero weight and constant bias (used for identity gates).
  static Dense constant(ParameterSet& params, const std::string& prefix, std::size_t in,
                        std::size_t out, double bias);
  ad::Tensor operator()(const ad::Tensor& x) const;
  std::size_t in() const { return weight_.dim(0); }
  std::size_t out() const { return weight_.dim(1); }

 private:
  ad::Tensor weight_, bias_;
};

/// Per-edge relative pose code [N*K, F] for the edges of `knn`.
/// Equivariant source: U_r^T (v_j - v_r) flattened from [3, C].
ad::Tensor rpr_code(const ad::Tensor& frames, const ad::Tensor& v, const KnnGraph& knn);
/// Coordinate source: U_r^T (p_j - p_r), one vector channel.
ad::Tensor rpr_coordinate_code(const ad::Tensor& frames, const PointCloud& cloud,
                               const KnnGraph& knn);
/// (|d|, angle(d, p_r - c), angle(d, p_j - c), angle(p_r - c, p_j - c)),
/// d = p_j - p_r, c the centroid. Constant, rotation invariant.
ad::Tensor rpr_ppf_code(const PointCloud& cloud, const KnnGraph& knn);
/// x_j - x_r from invariant features [N, C].
ad::Tensor rpr_invariant_code(const ad::Tensor& x, const KnnGraph& knn);

/// First invariant edge convolution:
///   x_r = max_j psi(U_r^T p_r, U_r^T (p_j - p_r)), psi = relu(Dense) twice.
ad::Tensor invariant_edgeconv_first(const PointCloud& cloud, const ad::Tensor& frames,
                                    const KnnGraph& knn, const Dense& psi0, const Dense& psi1);

/// Multiplicative per-channel gate W_j(F) = Dense(relu(Dense(F))) applied to x_j.
ad::Tensor rpr_refine(const ad::Tensor& xj, const ad::Tensor& code, const Dense& gate0,
                      const Dense& gate1);

/// Later invariant edge convolution on graph `knn`:
///   x'_r = max_j relu(phi(x_r, xhat_j - x_r)), xhat_j = gate * x_j when a
///   code is given, x_j otherwise.
ad::Tensor invariant_edgeconv(const ad::Tensor& x, const KnnGraph& knn, const Dense& phi,
                              const ad::Tensor* code, const Dense* gate0, const Dense* gate1);

/// Softmax over the two branches of per-channel scores [D, 2], then
/// s1 * p_inv + s2 * p_eqv for projected features [B, D].
ad::Tensor fuse_attention(const ad::Tensor& p_inv, const ad::Tensor& p_eqv,
                          const ad::Tensor& scores);

struct ForwardResult {
  ad::Tensor logits_inv;    // [1, classes]
  ad::Tensor logits_eqv;    // undefined without fusion
  ad::Tensor logits_fused;  // undefined without fusion
  ad::Tensor v1, v2;        // projected pair [N, 3]; undefined for fixed frames
  ad::Tensor frames;        // [N, 3, 3]
  ad::Tensor equivariant;   // [N, 3, C]; undefined when unused
  KnnGraph knn;             // coordinate-space graph
  std::size_t degenerate_points = 0;

  /// Logits used for prediction: fused when available, else invariant.
  const ad::Tensor& logits() const;
  int predicted_class() const;
};

struct Diagnostics {
  double consistency_axis1 = 0.0;
  double consistency_axis2 = 0.0;
  /// max |u1^T u2| over points.
  double orthogonality_residual = 0.0;
  std::size_t degenerate_points = 0;
};

Diagnostics diagnose(const ForwardResult& r);

struct LossTerms {
  ad::Tensor total;
  double ce_inv = 0.0, ce_eqv = 0.0, ce_fused = 0.0, orth = 0.0, consist = 0.0;
};

/// CE_inv + CE_eqv + CE_fused + lambda_orth * L_orth + lambda_consist * L_consist.
/// Undefined logits and an undefined pair drop their terms.
LossTerms total_loss(const ad::Tensor& logits_inv, const ad::Tensor& logits_eqv,
                     const ad::Tensor& logits_fused, std::span<const int> labels,
                     double lambda_orth, double lambda_consist, const ad::Tensor& v1,
                     const ad::Tensor& v2, const KnnGraph& knn,
                     frames::OrthogonalityVariant variant =
                         frames::OrthogonalityVariant::signed_dot);

class Model {
 public:
  explicit Model(ModelConfig config);

  ForwardResult forward(const PointCloud& cloud) const;
  LossTerms loss(const ForwardResult& r, int label) const;

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  ModelConfig config_;
  ParameterSet params_;

  std::optional<vn::VnEncoder> encoder_;
  ad::Tensor projection_;  // [C_vn, 2]

  Dense psi0_, psi1_;
  std::vector<Dense> phi_;
  std::vector<Dense> gate0_, gate1_;
  Dense inv_cls0_, inv_cls1_;

  ad::Tensor head_;  // [C_vn, head_channels]
  Dense eqv_cls0_, eqv_cls1_;
  Dense proj_inv_, proj_eqv_;
  ad::Tensor scores_;  // [D, 2]
  Dense fused_cls0_, fused_cls1_;
};

}  // namespace rotinv::net
