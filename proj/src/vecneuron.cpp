#include "rotinv/vecneuron.hpp"

#include <stdexcept>

namespace rotinv::vn {

using ad::Tensor;

Tensor vn_linear(const Tensor& v, const Tensor& w) {
  if (v.rank() < 2 || v.dim(-2) != 3)
    throw std::invalid_argument("vn_linear: expected [..., 3, C], got " + ad::shape_str(v.shape()));
  return ad::matmul(v, w);
}

Tensor vn_nonlinearity(const Tensor& v, const Tensor& w_dir) {
  if (v.rank() < 2 || v.dim(-2) != 3)
    throw std::invalid_argument("vn_nonlinearity: expected [..., 3, C], got " +
                                ad::shape_str(v.shape()));
  const std::size_t c = v.dim(-1);
  const Tensor khat = ad::expand(ad::normalize(ad::matmul(v, w_dir), -2), -1, c);
  const Tensor dot = ad::sum(v * khat, -2, true);  // [..., 1, C]
  const Tensor removed = ad::expand(ad::relu(-dot), -2, 3) * khat;
  return v + removed;
}

Tensor vn_edge_inputs(const Tensor& v, const KnnGraph& knn) {
  const std::size_t n = v.dim(0), c = v.dim(-1), k = knn.k;
  if (k == 0) throw std::invalid_argument("vn_edgeconv: empty neighborhood");
  if (knn.n != n) throw std::invalid_argument("vn_edgeconv: graph size does not match features");
  const Tensor vj = ad::gather(v, knn.indices);
  const Tensor vr = ad::reshape(ad::expand(ad::reshape(v, {n, 1, 3, c}), 1, k), {n * k, 3, c});
  return ad::concat({vr, vj - vr}, -1);
}

Tensor lift_points(const PointCloud& cloud) {
  const std::size_t n = cloud.size();
  std::vector<double> v(cloud.flat().begin(), cloud.flat().end());
  return Tensor::from({n, 3, 1}, std::move(v));
}

VnEdgeConv::VnEdgeConv(ParameterSet& params, const std::string& prefix, std::size_t in_channels,
                       std::size_t out_channels)
    : in_(in_channels), out_(out_channels) {
  weight_ = params.uniform(prefix + ".weight", {2 * in_, out_}, 2 * in_);
  direction_ = params.uniform(prefix + ".direction", {out_, 1}, out_);
}

Tensor VnEdgeConv::forward(const Tensor& v, const KnnGraph& knn) const {
  if (v.dim(-1) != in_)
    throw std::invalid_argument("VnEdgeConv: expected " + std::to_string(in_) + " channels");
  const std::size_t n = v.dim(0);
  const Tensor e = vn_edge_inputs(v, knn);
  const Tensor h = vn_nonlinearity(vn_linear(e, weight_), direction_);
  return ad::mean(ad::reshape(h, {n, knn.k, 3, out_}), 1);
}

VnEncoder::VnEncoder(ParameterSet& params, const std::string& prefix,
                     const std::vector<std::size_t>& widths) {
  if (widths.empty()) throw std::invalid_argument("VnEncoder: no layers");
  std::size_t in = 1;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    layers_.emplace_back(params, prefix + ".l" + std::to_string(i), in, widths[i]);
    in = widths[i];
  }
}

Tensor VnEncoder::forward(const PointCloud& cloud, const KnnGraph& knn) const {
  Tensor v = lift_points(cloud);
  for (const auto& layer : layers_) v = layer.forward(v, knn);
  return v;
}

Tensor vn_invariant_head(const Tensor& v, const Tensor& w_head) {
  if (v.rank() != 3 || v.dim(1) != 3)
    throw std::invalid_argument("vn_invariant_head: expected [B, 3, C], got " +
                                ad::shape_str(v.shape()));
  return ad::bmm(ad::transpose(v, 1, 2), ad::matmul(v, w_head));
}

}  // namespace rotinv::vn
