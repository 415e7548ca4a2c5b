#pragma once

// Vector-neuron layers. Features are lists of 3D vectors laid out as
// [..., 3, C]: axis -2 is the spatial axis, axis -1 the channel axis. Every
// learnable map acts on the channel axis only, so h(RV) = R h(V).

#include <string>
#include <vector>

#include "rotinv/autodiff.hpp"
#include "rotinv/geometry.hpp"
#include "rotinv/optim.hpp"

namespace rotinv::vn {

/// V[..., 3, Cin] * W[Cin, Cout] -> [..., 3, Cout].
ad::Tensor vn_linear(const ad::Tensor& v, const ad::Tensor& w);

/// Per channel: keep v_c when <v_c, k> >= 0, otherwise remove its component
/// along k/|k|, where k = V * w_dir[C, 1] is a learned direction that
/// co-rotates with V.
ad::Tensor vn_nonlinearity(const ad::Tensor& v, const ad::Tensor& w_dir);

/// Edge inputs [N*K, 3, 2C]: (v_r, v_j - v_r) for every neighbor j of r.
ad::Tensor vn_edge_inputs(const ad::Tensor& v, const KnnGraph& knn);

/// Raw coordinates lifted to one vector channel: [N, 3, 1].
ad::Tensor lift_points(const PointCloud& cloud);

class VnEdgeConv {
 public:
  VnEdgeConv(ParameterSet& params, const std::string& prefix, std::size_t in_channels,
             std::size_t out_channels);

  /// Channelwise mean over neighbors of vn_nonlinearity(vn_linear(edge inputs)).
  /// Throws std::invalid_argument on an empty neighborhood.
  ad::Tensor forward(const ad::Tensor& v, const KnnGraph& knn) const;

  std::size_t out_channels() const { return out_; }

 private:
  std::size_t in_, out_;
  ad::Tensor weight_;     // [2*in, out]
  ad::Tensor direction_;  // [out, 1]
};

/// Stack of vector-neuron edge convolutions on the coordinate-space graph.
class VnEncoder {
 public:
  VnEncoder(ParameterSet& params, const std::string& prefix, const std::vector<std::size_t>& widths);

  /// Per-point equivariant features [N, 3, C_last].
  ad::Tensor forward(const PointCloud& cloud, const KnnGraph& knn) const;
  std::size_t out_channels() const { return layers_.back().out_channels(); }

 private:
  std::vector<VnEdgeConv> layers_;
};

/// Gram read-out V^T (V W): [B, 3, C] -> [B, C, C'], invariant to rotation.
ad::Tensor vn_invariant_head(const ad::Tensor& v, const ad::Tensor& w_head);

}  // namespace rotinv::vn
