#include "rotinv/network.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rotinv::net {

using ad::Tensor;
using frames::FrameKind;

std::string_view to_string(RprSource s) {
  switch (s) {
    case RprSource::off: return "off";
    case RprSource::coordinate: return "coordinate";
    case RprSource::handcrafted_ppf: return "handcrafted-ppf";
    case RprSource::equivariant: return "equivariant";
    case RprSource::invariant: return "invariant";
  }
  return "?";
}

RprSource rpr_source_from_string(std::string_view s) {
  if (s == "off") return RprSource::off;
  if (s == "coordinate") return RprSource::coordinate;
  if (s == "handcrafted-ppf" || s == "ppf") return RprSource::handcrafted_ppf;
  if (s == "equivariant") return RprSource::equivariant;
  if (s == "invariant") return RprSource::invariant;
  throw std::invalid_argument("unknown rpr source: " + std::string(s));
}

std::string_view to_string(Fusion f) { return f == Fusion::off ? "off" : "attention"; }

Fusion fusion_from_string(std::string_view s) {
  if (s == "off") return Fusion::off;
  if (s == "attention") return Fusion::attention;
  throw std::invalid_argument("unknown fusion mode: " + std::string(s));
}

bool ModelConfig::learned_frames() const {
  return frame_kind == FrameKind::gram_schmidt || frame_kind == FrameKind::lcrf;
}

bool ModelConfig::needs_equivariant() const {
  return learned_frames() || rpr == RprSource::equivariant || fusion == Fusion::attention;
}

void ModelConfig::validate() const {
  if (lambda_orth < 0.0 || lambda_consist < 0.0)
    throw std::invalid_argument("loss weights must be non-negative");
  if (vn_widths.empty() || inv_widths.empty())
    throw std::invalid_argument("layer widths must be non-empty");
  auto positive = [](const std::vector<std::size_t>& w) {
    return std::all_of(w.begin(), w.end(), [](std::size_t x) { return x >= 1; });
  };
  if (!positive(vn_widths) || !positive(inv_widths) || num_classes < 2 || head_channels < 1 ||
      fusion_width < 1 || classifier_hidden < 1 || gate_hidden < 1 || k < 1)
    throw std::invalid_argument("widths and counts must be at least 1 (classes at least 2)");
}

ModelConfig preset(std::string_view name) {
  ModelConfig c;
  c.name = std::string(name);
  auto set = [&c](FrameKind f, RprSource r, Fusion u) {
    c.frame_kind = f;
    c.rpr = r;
    c.fusion = u;
  };
  using enum RprSource;
  constexpr auto gs = FrameKind::gram_schmidt;
  constexpr auto lcrf = FrameKind::lcrf;
  constexpr auto on = Fusion::attention;
  if (name == "t4r1") set(gs, off, Fusion::off);
  else if (name == "t4r2") set(gs, off, on);
  else if (name == "t4r3") set(lcrf, off, on);
  else if (name == "t4r4") set(gs, coordinate, on);
  else if (name == "t4r5") set(gs, equivariant, on);
  else if (name == "t4r6" || name == "full") set(lcrf, equivariant, on);
  else if (name == "t5r1") set(FrameKind::handcrafted, equivariant, on);
  else if (name == "t5r2") set(gs, equivariant, on);
  else if (name == "t5r3") set(lcrf, equivariant, on);
  else if (name == "t6r1") set(lcrf, coordinate, on);
  else if (name == "t6r2") set(lcrf, handcrafted_ppf, on);
  else if (name == "t6r3") set(lcrf, equivariant, on);
  else if (name == "t6r4") set(lcrf, invariant, on);
  else if (name == "identity") {
    set(FrameKind::identity, off, Fusion::off);
    c.lambda_orth = c.lambda_consist = 0.0;
  } else
    throw std::invalid_argument("unknown preset: " + std::string(name));
  return c;
}

std::vector<std::string> preset_names() {
  return {"t4r1", "t4r2", "t4r3", "t4r4", "t4r5", "t4r6", "t5r1", "t5r2",
          "t5r3", "t6r1", "t6r2", "t6r3", "t6r4", "identity", "full"};
}

// ---- Dense ----------------------------------------------------------------

Dense::Dense(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out) {
  weight_ = params.uniform(prefix + ".weight", {in, out}, in);
  bias_ = params.constant(prefix + ".bias", {out}, 0.0);
}

Dense Dense::constant(ParameterSet& params, const std::string& prefix, std::size_t in,
                      std::size_t out, double bias) {
  Dense d;
  d.weight_ = params.constant(prefix + ".weight", {in, out}, 0.0);
  d.bias_ = params.constant(prefix + ".bias", {out}, bias);
  return d;
}

Tensor Dense::operator()(const Tensor& x) const { return ad::matmul(x, weight_) + bias_; }

// ---- edge helpers ------------------------------------------------------------

namespace {

/// Rows of x [N, ...] repeated K times: [N*K, ...].
Tensor centers(const Tensor& x, std::size_t k) {
  ad::Shape s = x.shape();
  ad::Shape with_axis = s;
  with_axis.insert(with_axis.begin() + 1, 1);
  ad::Shape flat = s;
  flat[0] *= k;
  return ad::reshape(ad::expand(ad::reshape(x, with_axis), 1, k), flat);
}

Tensor points_tensor(const PointCloud& cloud) {
  return Tensor::from({cloud.size(), 3}, {cloud.flat().begin(), cloud.flat().end()});
}

/// U_r^T applied to per-edge vector features d [N*K, 3, C] -> [N*K, 3*C].
Tensor to_local(const Tensor& frames, const Tensor& d, std::size_t n, std::size_t k) {
  const std::size_t c = d.dim(-1);
  Tensor t = ad::transpose(ad::reshape(d, {n, k, 3, c}), 1, 2);  // [N, 3, K, C]
  t = ad::bmm(ad::transpose(frames, 1, 2), ad::reshape(t, {n, 3, k * c}));
  t = ad::transpose(ad::reshape(t, {n, 3, k, c}), 1, 2);  // [N, K, 3, C]
  return ad::reshape(t, {n * k, 3 * c});
}

void check_graph(const KnnGraph& knn, std::size_t n) {
  if (knn.k == 0) throw std::invalid_argument("edge convolution: empty neighborhood");
  if (knn.n != n) throw std::invalid_argument("edge convolution: graph size mismatch");
}

double angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace

Tensor rpr_code(const Tensor& frames, const Tensor& v, const KnnGraph& knn) {
  const std::size_t n = v.dim(0);
  check_graph(knn, n);
  const Tensor diff = ad::gather(v, knn.indices) - centers(v, knn.k);
  return to_local(frames, diff, n, knn.k);
}

Tensor rpr_coordinate_code(const Tensor& frames, const PointCloud& cloud, const KnnGraph& knn) {
  return rpr_code(frames, vn::lift_points(cloud), knn);
}

Tensor rpr_ppf_code(const PointCloud& cloud, const KnnGraph& knn) {
  check_graph(knn, cloud.size());
  const Eigen::Vector3d c = centroid(cloud);
  std::vector<double> out;
  out.reserve(knn.n * knn.k * 4);
  for (std::size_t r = 0; r < knn.n; ++r) {
    const Eigen::Vector3d pr = cloud.points.row(static_cast<Eigen::Index>(r)).transpose();
    for (std::size_t j : knn.row(r)) {
      const Eigen::Vector3d pj = cloud.points.row(static_cast<Eigen::Index>(j)).transpose();
      const Eigen::Vector3d d = pj - pr;
      out.insert(out.end(), {d.norm(), angle(d, pr - c), angle(d, pj - c), angle(pr - c, pj - c)});
    }
  }
  return Tensor::from({knn.n * knn.k, 4}, std::move(out));
}

Tensor rpr_invariant_code(const Tensor& x, const KnnGraph& knn) {
  check_graph(knn, x.dim(0));
  return ad::gather(x, knn.indices) - centers(x, knn.k);
}

Tensor invariant_edgeconv_first(const PointCloud& cloud, const Tensor& frames, const KnnGraph& knn,
                                const Dense& psi0, const Dense& psi1) {
  const std::size_t n = cloud.size(), k = knn.k;
  check_graph(knn, n);
  const Tensor p = points_tensor(cloud);
  const Tensor local_p = ad::bmm(ad::reshape(p, {n, 1, 3}), frames);  // (U^T p)^T
  const Tensor d = ad::reshape(ad::gather(p, knn.indices) - centers(p, k), {n, k, 3});
  const Tensor local_d = ad::bmm(d, frames);  // [N, K, 3]
  const Tensor edges = ad::concat({ad::expand(local_p, 1, k), local_d}, -1);  // [N, K, 6]
  const Tensor h = ad::relu(psi1(ad::relu(psi0(edges))));
  return ad::max(h, 1);
}

Tensor rpr_refine(const Tensor& xj, const Tensor& code, const Dense& gate0, const Dense& gate1) {
  const Tensor gate = gate1(ad::relu(gate0(code)));
  return gate * xj;
}

Tensor invariant_edgeconv(const Tensor& x, const KnnGraph& knn, const Dense& phi, const Tensor* code,
                          const Dense* gate0, const Dense* gate1) {
  const std::size_t n = x.dim(0), k = knn.k;
  check_graph(knn, n);
  const Tensor xr = centers(x, k);
  Tensor xj = ad::gather(x, knn.indices);
  if (code) xj = rpr_refine(xj, *code, *gate0, *gate1);
  const Tensor h = ad::relu(phi(ad::concat({xr, xj - xr}, -1)));
  return ad::max(ad::reshape(h, {n, k, phi.out()}), 1);
}

Tensor fuse_attention(const Tensor& p_inv, const Tensor& p_eqv, const Tensor& scores) {
  if (scores.rank() != 2 || scores.dim(1) != 2 || p_inv.shape() != p_eqv.shape() ||
      p_inv.dim(-1) != scores.dim(0))
    throw std::invalid_argument("fuse_attention: shape mismatch");
  const std::size_t d = scores.dim(0);
  const Tensor s = ad::softmax(scores);
  const Tensor s1 = ad::reshape(ad::slice(s, 1, 0, 1), {d});
  const Tensor s2 = ad::reshape(ad::slice(s, 1, 1, 2), {d});
  return p_inv * s1 + p_eqv * s2;
}

// ---- results, diagnostics, loss --------------------------------------------------

const Tensor& ForwardResult::logits() const {
  return logits_fused.defined() ? logits_fused : logits_inv;
}

int ForwardResult::predicted_class() const {
  const auto v = logits().values();
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

Diagnostics diagnose(const ForwardResult& r) {
  Diagnostics d;
  d.consistency_axis1 = frames::mean_consistency(r.frames, r.knn, 1);
  d.consistency_axis2 = frames::mean_consistency(r.frames, r.knn, 2);
  const auto v = r.frames.values();
  for (std::size_t p = 0; p < r.frames.dim(0); ++p) {
    double dot = 0.0;
    for (std::size_t i = 0; i < 3; ++i) dot += v[p * 9 + i * 3] * v[p * 9 + i * 3 + 1];
    d.orthogonality_residual = std::max(d.orthogonality_residual, std::abs(dot));
  }
  d.degenerate_points = r.degenerate_points;
  return d;
}

LossTerms total_loss(const Tensor& logits_inv, const Tensor& logits_eqv, const Tensor& logits_fused,
                     std::span<const int> labels, double lambda_orth, double lambda_consist,
                     const Tensor& v1, const Tensor& v2, const KnnGraph& knn,
                     frames::OrthogonalityVariant variant) {
  LossTerms t;
  Tensor total = ad::cross_entropy(logits_inv, labels);
  t.ce_inv = total.item();
  if (logits_eqv.defined()) {
    const Tensor ce = ad::cross_entropy(logits_eqv, labels);
    t.ce_eqv = ce.item();
    total = total + ce;
  }
  if (logits_fused.defined()) {
    const Tensor ce = ad::cross_entropy(logits_fused, labels);
    t.ce_fused = ce.item();
    total = total + ce;
  }
  if (v1.defined() && v2.defined()) {
    const Tensor orth = frames::orthogonality_loss(v1, v2, variant);
    const Tensor consist = frames::consistency_loss(v1, v2, knn);
    t.orth = orth.item();
    t.consist = consist.item();
    if (lambda_orth != 0.0) total = total + orth * lambda_orth;
    if (lambda_consist != 0.0) total = total + consist * lambda_consist;
  }
  t.total = total;
  return t;
}

// ---- Model -------------------------------------------------------------------

Model::Model(ModelConfig config) : config_(std::move(config)), params_(config_.seed) {
  config_.validate();
  const auto& c = config_;
  const std::size_t cv = c.vn_widths.back();

  if (c.needs_equivariant()) encoder_.emplace(params_, "vn", c.vn_widths);
  if (c.learned_frames()) projection_ = params_.uniform("frame.projection", {cv, 2}, cv);

  const auto& w = c.inv_widths;
  psi0_ = Dense(params_, "inv.l0.psi0", 6, w[0]);
  psi1_ = Dense(params_, "inv.l0.psi1", w[0], w[0]);
  for (std::size_t l = 1; l < w.size(); ++l) {
    const std::string prefix = "inv.l" + std::to_string(l);
    phi_.emplace_back(params_, prefix + ".phi", 2 * w[l - 1], w[l]);
    if (c.rpr != RprSource::off) {
      std::size_t code_dim = 0;
      switch (c.rpr) {
        case RprSource::coordinate: code_dim = 3; break;
        case RprSource::handcrafted_ppf: code_dim = 4; break;
        case RprSource::equivariant: code_dim = 3 * cv; break;
        case RprSource::invariant: code_dim = w[l - 1]; break;
        case RprSource::off: break;
      }
      gate0_.emplace_back(params_, prefix + ".gate0", code_dim, c.gate_hidden);
      gate1_.push_back(Dense::constant(params_, prefix + ".gate1", c.gate_hidden, w[l - 1], 1.0));
    }
  }
  const std::size_t pooled = std::accumulate(w.begin(), w.end(), std::size_t{0});
  inv_cls0_ = Dense(params_, "inv.cls0", pooled, c.classifier_hidden);
  inv_cls1_ = Dense(params_, "inv.cls1", c.classifier_hidden, c.num_classes);

  if (c.fusion == Fusion::attention) {
    const std::size_t eqv_dim = cv * c.head_channels;
    head_ = params_.uniform("eqv.head", {cv, c.head_channels}, cv);
    eqv_cls0_ = Dense(params_, "eqv.cls0", eqv_dim, c.classifier_hidden);
    eqv_cls1_ = Dense(params_, "eqv.cls1", c.classifier_hidden, c.num_classes);
    proj_inv_ = Dense(params_, "fuse.proj_inv", pooled, c.fusion_width);
    proj_eqv_ = Dense(params_, "fuse.proj_eqv", eqv_dim, c.fusion_width);
    scores_ = params_.constant("fuse.scores", {c.fusion_width, 2}, 0.0);
    fused_cls0_ = Dense(params_, "fuse.cls0", c.fusion_width, c.classifier_hidden);
    fused_cls1_ = Dense(params_, "fuse.cls1", c.classifier_hidden, c.num_classes);
  }
}

ForwardResult Model::forward(const PointCloud& cloud) const {
  const auto& c = config_;
  const std::size_t n = cloud.size();
  if (c.k >= n)
    throw std::invalid_argument("cloud has " + std::to_string(n) + " points; K = " +
                                std::to_string(c.k) + " needs more");
  ForwardResult r;
  r.knn = knn_graph(cloud, c.k);

  if (encoder_) r.equivariant = encoder_->forward(cloud, r.knn);

  if (c.learned_frames()) {
    const Tensor proj = vn::vn_linear(r.equivariant, projection_);  // [N, 3, 2]
    r.v1 = ad::normalize(ad::reshape(ad::slice(proj, -1, 0, 1), {n, 3}), -1);
    r.v2 = ad::normalize(ad::reshape(ad::slice(proj, -1, 1, 2), {n, 3}), -1);
    const auto mask = frames::degenerate_rows(r.v1, r.v2, c.frame_kind);
    r.degenerate_points = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    r.frames = c.frame_kind == FrameKind::lcrf ? frames::lcrf_frames(r.v1, r.v2)
                                               : frames::gram_schmidt_frames(r.v1, r.v2);
  } else {
    r.frames = frames::fixed_frames(cloud, r.knn, c.frame_kind, &r.degenerate_points);
  }

  std::vector<Tensor> layers;
  layers.push_back(invariant_edgeconv_first(cloud, r.frames, r.knn, psi0_, psi1_));
  for (std::size_t l = 0; l < phi_.size(); ++l) {
    const Tensor& x = layers.back();
    const KnnGraph g = knn_graph(x.values(), n, x.dim(1), c.k, Metric::feature);
    if (c.rpr == RprSource::off) {
      layers.push_back(invariant_edgeconv(x, g, phi_[l], nullptr, nullptr, nullptr));
      continue;
    }
    Tensor code;
    switch (c.rpr) {
      case RprSource::coordinate: code = rpr_coordinate_code(r.frames, cloud, g); break;
      case RprSource::handcrafted_ppf: code = rpr_ppf_code(cloud, g); break;
      case RprSource::equivariant: code = rpr_code(r.frames, r.equivariant, g); break;
      case RprSource::invariant: code = rpr_invariant_code(x, g); break;
      case RprSource::off: break;
    }
    layers.push_back(invariant_edgeconv(x, g, phi_[l], &code, &gate0_[l], &gate1_[l]));
  }
  const Tensor inv = ad::max(ad::concat(layers, -1), 0, true);  // [1, sum of widths]
  r.logits_inv = inv_cls1_(ad::relu(inv_cls0_(inv)));

  if (c.fusion == Fusion::attention) {
    const std::size_t cv = r.equivariant.dim(-1);
    // Per-point invariants, then pooling: pooling the vectors first cancels on
    // centrally symmetric shapes.
    const Tensor gram = ad::reshape(vn::vn_invariant_head(r.equivariant, head_),
                                    {n, cv * c.head_channels});
    const Tensor eqv = ad::mean(gram, 0, true);
    r.logits_eqv = eqv_cls1_(ad::relu(eqv_cls0_(eqv)));
    const Tensor fused =
        fuse_attention(ad::relu(proj_inv_(inv)), ad::relu(proj_eqv_(eqv)), scores_);
    r.logits_fused = fused_cls1_(ad::relu(fused_cls0_(fused)));
  }
  return r;
}

LossTerms Model::loss(const ForwardResult& r, int label) const {
  const int labels[1] = {label};
  const bool learned = config_.learned_frames();
  return total_loss(r.logits_inv, r.logits_eqv, r.logits_fused, labels, config_.lambda_orth,
                    config_.lambda_consist, learned ? r.v1 : Tensor(), learned ? r.v2 : Tensor(),
                    r.knn, config_.orth_variant);
}

}  // namespace rotinv::net
