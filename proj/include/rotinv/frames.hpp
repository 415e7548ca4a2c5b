#pragma once

// Local reference frames.
//
// Two routes compute the same constructions:
//  * scalar functions on Eigen vectors, used for introspection, export and as
//    oracles in tests;
//  * batched tensor functions on [N, 3] inputs producing [N, 3, 3] frames with
//    columns (u1, u2, u3), differentiable end to end for training.

#include <Eigen/Core>
#include <string_view>
#include <utility>
#include <vector>

#include "rotinv/autodiff.hpp"
#include "rotinv/geometry.hpp"

namespace rotinv::frames {

/// Guard on |v1^T v2| below which the two projected directions are usable.
inline constexpr double kDegenerateEps = 1e-6;

enum class FrameKind { identity, handcrafted, gram_schmidt, lcrf };

std::string_view to_string(FrameKind kind);
FrameKind frame_kind_from_string(std::string_view s);

/// Two unit directions derived from equivariant features.
struct ProjectedPair {
  Eigen::Vector3d first;
  Eigen::Vector3d second;

  /// Normalizes both inputs; throws DegenerateInputError on a zero vector.
  static ProjectedPair from(const Eigen::Vector3d& a, const Eigen::Vector3d& b);
  double dot() const { return first.dot(second); }
};

/// Orthonormal basis with columns u1, u2, u3 = u1 x u2.
struct Frame {
  Eigen::Matrix3d basis = Eigen::Matrix3d::Identity();
  FrameKind kind = FrameKind::identity;

  Eigen::Vector3d u1() const { return basis.col(0); }
  Eigen::Vector3d u2() const { return basis.col(1); }
  Eigen::Vector3d u3() const { return basis.col(2); }
};

struct BisectorIntermediates {
  double sin_theta = 0.0;
  double cos_theta = 0.0;
  Eigen::Vector3d bisector = Eigen::Vector3d::Zero();
};

/// u1 = v1; u2 = normalize(v2 - <v2, u1> u1); u3 = u1 x u2.
/// Throws DegenerateFrameError when |v1^T v2| >= 1 - eps.
Frame gram_schmidt_frame(const ProjectedPair& pair);

/// Bisector construction: sin/cos of the half angle, bisector scaled to
/// sin + cos, then u_i = normalize(bisector - v_i).
/// Throws DegenerateFrameError unless v1^T v2 lies in (-1 + eps, 1 - eps).
std::pair<Frame, BisectorIntermediates> lcrf_frame(const ProjectedPair& pair);

/// First axis from the global centroid to p_r, second from p_r to the
/// barycenter of its neighbors, Gram-Schmidt orthogonalized.
Frame handcrafted_frame(const PointCloud& cloud, std::size_t r, const KnnGraph& knn);

/// Cosine between corresponding axes (1 or 2) of two frames.
double consistency(const Frame& a, const Frame& b, int axis);

/// Each step of the orthogonality derivation for one pair, evaluated numerically.
struct DerivationResiduals {
  double bisector_sq = 0.0;        // v^T v       vs (sin + cos)^2
  double bisector_dot_second = 0;  // v^T v2      vs cos (sin + cos)
  double first_dot_bisector = 0;   // v1^T v      vs cos (sin + cos)
  double pair_dot = 0.0;           // v1^T v2     vs 2 cos^2 - 1
  double numerator = 0.0;          // (v - v1)^T (v - v2) vs 0
  double max() const;
};

/// Residuals of every line of the derivation that u1 and u2 are orthogonal.
DerivationResiduals theorem1_identity_check(const ProjectedPair& pair);

// ---- batched, differentiable ----------------------------------------------

/// Rows whose pair falls inside the degenerate guard for `kind`.
std::vector<bool> degenerate_rows(const ad::Tensor& v1, const ad::Tensor& v2, FrameKind kind);

/// Frames [N, 3, 3] from unit directions v1, v2 [N, 3]. Rows inside the
/// guard band get the identity frame and pass no gradient.
ad::Tensor gram_schmidt_frames(const ad::Tensor& v1, const ad::Tensor& v2);
ad::Tensor lcrf_frames(const ad::Tensor& v1, const ad::Tensor& v2);

/// Constant frames [N, 3, 3] for the non-learned kinds (identity, handcrafted).
/// Degenerate handcrafted points fall back to identity; `fallbacks` counts them.
ad::Tensor fixed_frames(const PointCloud& cloud, const KnnGraph& knn, FrameKind kind,
                        std::size_t* fallbacks = nullptr);

/// Convert a batched frame tensor back to scalar frames.
std::vector<Frame> to_frames(const ad::Tensor& frames, FrameKind kind);

enum class OrthogonalityVariant { signed_dot, squared };

/// Mean over points of v1^T v2 (or its square).
ad::Tensor orthogonality_loss(const ad::Tensor& v1, const ad::Tensor& v2,
                              OrthogonalityVariant variant = OrthogonalityVariant::signed_dot);

/// Mean over KNN edges (a, b) of (v_{a,1}^T v_{b,1} - v_{a,2}^T v_{b,2})^2.
ad::Tensor consistency_loss(const ad::Tensor& v1, const ad::Tensor& v2, const KnnGraph& knn);

/// Mean over KNN edges of u_{a,axis}^T u_{b,axis} for frames [N, 3, 3].
double mean_consistency(const ad::Tensor& frames, const KnnGraph& knn, int axis);

}  // namespace rotinv::frames
