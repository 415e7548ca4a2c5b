#include "rotinv/frames.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "rotinv/errors.hpp"

namespace rotinv::frames {

using ad::Tensor;

std::string_view to_string(FrameKind kind) {
  switch (kind) {
    case FrameKind::identity: return "identity";
    case FrameKind::handcrafted: return "handcrafted";
    case FrameKind::gram_schmidt: return "gram-schmidt";
    case FrameKind::lcrf: return "lcrf";
  }
  return "?";
}

FrameKind frame_kind_from_string(std::string_view s) {
  if (s == "identity") return FrameKind::identity;
  if (s == "handcrafted") return FrameKind::handcrafted;
  if (s == "gram-schmidt" || s == "gs") return FrameKind::gram_schmidt;
  if (s == "lcrf") return FrameKind::lcrf;
  throw std::invalid_argument("unknown frame kind: " + std::string(s));
}

ProjectedPair ProjectedPair::from(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateInputError("zero vector in projected pair");
  return {a / na, b / nb};
}

Frame gram_schmidt_frame(const ProjectedPair& pair) {
  const double d = pair.dot();
  if (std::abs(d) >= 1.0 - kDegenerateEps)
    throw DegenerateFrameError("gram-schmidt frame: near-parallel directions", d);
  Frame f;
  f.kind = FrameKind::gram_schmidt;
  const Eigen::Vector3d u1 = pair.first;
  const Eigen::Vector3d u2 = (pair.second - pair.second.dot(u1) * u1).normalized();
  f.basis.col(0) = u1;
  f.basis.col(1) = u2;
  f.basis.col(2) = u1.cross(u2);
  return f;
}

std::pair<Frame, BisectorIntermediates> lcrf_frame(const ProjectedPair& pair) {
  const double d = pair.dot();
  if (!(d > -1.0 + kDegenerateEps && d < 1.0 - kDegenerateEps))
    throw DegenerateFrameError("lcrf frame: dot product outside the valid range", d);
  BisectorIntermediates b;
  b.sin_theta = std::sqrt((1.0 - d) / 2.0);
  b.cos_theta = std::sqrt((1.0 + d) / 2.0);
  b.bisector = (pair.first + pair.second).normalized() * (b.sin_theta + b.cos_theta);
  Frame f;
  f.kind = FrameKind::lcrf;
  const Eigen::Vector3d u1 = (b.bisector - pair.first).normalized();
  const Eigen::Vector3d u2 = (b.bisector - pair.second).normalized();
  f.basis.col(0) = u1;
  f.basis.col(1) = u2;
  f.basis.col(2) = u1.cross(u2);
  return {f, b};
}

Frame handcrafted_frame(const PointCloud& cloud, std::size_t r, const KnnGraph& knn) {
  if (knn.k == 0) throw std::invalid_argument("handcrafted frame: empty neighborhood");
  const Eigen::Vector3d p = cloud.points.row(static_cast<Eigen::Index>(r)).transpose();
  const Eigen::Vector3d radial = p - centroid(cloud);
  const double rn = radial.norm();
  if (rn <= 1e-12) throw DegenerateFrameError("handcrafted frame: point at the centroid", rn);
  const Eigen::Vector3d a = radial / rn;
  Eigen::Vector3d bary = Eigen::Vector3d::Zero();
  for (std::size_t j : knn.row(r)) bary += cloud.points.row(static_cast<Eigen::Index>(j)).transpose();
  bary /= static_cast<double>(knn.k);
  const Eigen::Vector3d toward = bary - p;
  const Eigen::Vector3d perp = toward - toward.dot(a) * a;
  const double pn = perp.norm();
  if (toward.norm() <= 1e-12 || pn <= kDegenerateEps * toward.norm())
    throw DegenerateFrameError("handcrafted frame: barycenter direction parallel to radial axis",
                               pn);
  Frame f;
  f.kind = FrameKind::handcrafted;
  f.basis.col(0) = a;
  f.basis.col(1) = perp / pn;
  f.basis.col(2) = a.cross(perp / pn);
  return f;
}

double consistency(const Frame& a, const Frame& b, int axis) {
  if (axis != 1 && axis != 2) throw std::invalid_argument("consistency axis must be 1 or 2");
  return a.basis.col(axis - 1).dot(b.basis.col(axis - 1));
}

double DerivationResiduals::max() const {
  return std::max({std::abs(bisector_sq), std::abs(bisector_dot_second),
                   std::abs(first_dot_bisector), std::abs(pair_dot), std::abs(numerator)});
}

DerivationResiduals theorem1_identity_check(const ProjectedPair& pair) {
  const auto [frame, b] = lcrf_frame(pair);
  (void)frame;
  const double s = b.sin_theta, c = b.cos_theta;
  const Eigen::Vector3d& v = b.bisector;
  DerivationResiduals r;
  r.bisector_sq = v.dot(v) - (s + c) * (s + c);
  r.bisector_dot_second = v.dot(pair.second) - c * (s + c);
  r.first_dot_bisector = pair.first.dot(v) - c * (s + c);
  r.pair_dot = pair.dot() - (2.0 * c * c - 1.0);
  r.numerator = (v - pair.first).dot(v - pair.second);
  return r;
}

// ---- batched ------------------------------------------------------------

namespace {

Tensor row_dot(const Tensor& a, const Tensor& b) { return ad::sum(a * b, -1, true); }

Tensor stack_columns(const Tensor& u1, const Tensor& u2, const Tensor& u3) {
  const std::size_t n = u1.dim(0);
  return ad::concat({ad::reshape(u1, {n, 3, 1}), ad::reshape(u2, {n, 3, 1}),
                     ad::reshape(u3, {n, 3, 1})},
                    -1);
}

Tensor identity_frames(std::size_t n) {
  std::vector<double> v(n * 9, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * 9 + 0] = v[i * 9 + 4] = v[i * 9 + 8] = 1.0;
  return Tensor::from({n, 3, 3}, std::move(v));
}

Tensor axis_rows(std::size_t n, int axis) {
  std::vector<double> v(n * 3, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * 3 + static_cast<std::size_t>(axis)] = 1.0;
  return Tensor::from({n, 3}, std::move(v));
}

void check_pair_shapes(const Tensor& v1, const Tensor& v2) {
  if (v1.shape() != v2.shape() || v1.rank() != 2 || v1.dim(1) != 3)
    throw std::invalid_argument("frame construction expects two [N, 3] tensors, got " +
                                ad::shape_str(v1.shape()) + " and " + ad::shape_str(v2.shape()));
}

template <typename Build>
Tensor guarded(const Tensor& v1, const Tensor& v2, FrameKind kind, Build build) {
  check_pair_shapes(v1, v2);
  const std::size_t n = v1.dim(0);
  const auto mask = degenerate_rows(v1, v2, kind);
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) return build(v1, v2);
  const Tensor a = ad::where_rows(mask, axis_rows(n, 0), v1);
  const Tensor b = ad::where_rows(mask, axis_rows(n, 1), v2);
  return ad::where_rows(mask, identity_frames(n), build(a, b));
}

}  // namespace

std::vector<bool> degenerate_rows(const Tensor& v1, const Tensor& v2, FrameKind kind) {
  check_pair_shapes(v1, v2);
  (void)kind;  // both learned constructions exclude |v1^T v2| >= 1 - eps
  const std::size_t n = v1.dim(0);
  std::vector<bool> mask(n);
  const auto a = v1.values();
  const auto b = v2.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[3 * i] * b[3 * i] + a[3 * i + 1] * b[3 * i + 1] + a[3 * i + 2] * b[3 * i + 2];
    mask[i] = !(std::abs(d) < 1.0 - kDegenerateEps);
  }
  return mask;
}

Tensor gram_schmidt_frames(const Tensor& v1, const Tensor& v2) {
  return guarded(v1, v2, FrameKind::gram_schmidt, [](const Tensor& a, const Tensor& b) {
    const Tensor& u1 = a;
    const Tensor proj = ad::expand(row_dot(b, u1), -1, 3) * u1;
    const Tensor u2 = ad::normalize(b - proj, -1);
    return stack_columns(u1, u2, ad::cross(u1, u2));
  });
}

Tensor lcrf_frames(const Tensor& v1, const Tensor& v2) {
  return guarded(v1, v2, FrameKind::lcrf, [](const Tensor& a, const Tensor& b) {
    const Tensor d = row_dot(a, b);                          // [N, 1]
    const Tensor sin_t = ad::sqrt(ad::scale(-d + 1.0, 0.5));  // [N, 1]
    const Tensor cos_t = ad::sqrt(ad::scale(d + 1.0, 0.5));
    const Tensor bis = ad::normalize(a + b, -1) * ad::expand(sin_t + cos_t, -1, 3);
    const Tensor u1 = ad::normalize(bis - a, -1);
    const Tensor u2 = ad::normalize(bis - b, -1);
    return stack_columns(u1, u2, ad::cross(u1, u2));
  });
}

Tensor fixed_frames(const PointCloud& cloud, const KnnGraph& knn, FrameKind kind,
                    std::size_t* fallbacks) {
  const std::size_t n = cloud.size();
  if (fallbacks) *fallbacks = 0;
  if (kind == FrameKind::identity) return identity_frames(n);
  if (kind != FrameKind::handcrafted)
    throw std::invalid_argument("fixed_frames: learned frame kinds need equivariant features");
  std::vector<double> v(n * 9);
  for (std::size_t r = 0; r < n; ++r) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    try {
      m = handcrafted_frame(cloud, r, knn).basis;
    } catch (const DegenerateFrameError&) {
      if (fallbacks) ++*fallbacks;
    }
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) v[r * 9 + static_cast<std::size_t>(i * 3 + c)] = m(i, c);
  }
  return Tensor::from({n, 3, 3}, std::move(v));
}

std::vector<Frame> to_frames(const Tensor& frames, FrameKind kind) {
  if (frames.rank() != 3 || frames.dim(1) != 3 || frames.dim(2) != 3)
    throw std::invalid_argument("to_frames: expected [N, 3, 3]");
  std::vector<Frame> out(frames.dim(0));
  const auto v = frames.values();
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r].kind = kind;
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) out[r].basis(i, c) = v[r * 9 + static_cast<std::size_t>(i * 3 + c)];
  }
  return out;
}

Tensor orthogonality_loss(const Tensor& v1, const Tensor& v2, OrthogonalityVariant variant) {
  check_pair_shapes(v1, v2);
  const Tensor d = row_dot(v1, v2);
  return variant == OrthogonalityVariant::squared ? ad::mean(d * d) : ad::mean(d);
}

Tensor consistency_loss(const Tensor& v1, const Tensor& v2, const KnnGraph& knn) {
  check_pair_shapes(v1, v2);
  const std::size_t n = v1.dim(0), k = knn.k;
  if (knn.n != n) throw std::invalid_argument("consistency_loss: graph size mismatch");
  if (k == 0) throw std::invalid_argument("consistency_loss: empty neighborhood");
  auto centers = [&](const Tensor& v) {
    return ad::reshape(ad::expand(ad::reshape(v, {n, 1, 3}), 1, k), {n * k, 3});
  };
  const Tensor c1 = row_dot(centers(v1), ad::gather(v1, knn.indices));
  const Tensor c2 = row_dot(centers(v2), ad::gather(v2, knn.indices));
  const Tensor diff = c1 - c2;
  return ad::mean(diff * diff);
}

double mean_consistency(const Tensor& frames, const KnnGraph& knn, int axis) {
  if (axis != 1 && axis != 2) throw std::invalid_argument("consistency axis must be 1 or 2");
  const auto v = frames.values();
  const auto col = static_cast<std::size_t>(axis - 1);
  double total = 0.0;
  for (std::size_t a = 0; a < knn.n; ++a)
    for (std::size_t b : knn.row(a)) {
      double s = 0.0;
      for (std::size_t i = 0; i < 3; ++i) s += v[a * 9 + i * 3 + col] * v[b * 9 + i * 3 + col];
      total += s;
    }
  return total / static_cast<double>(knn.n * knn.k);
}

}  // namespace rotinv::frames
