#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace rotinv {

using Rng = std::mt19937_64;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// N points in 3D with an optional class label and optional per-point labels.
struct PointCloud {
  Points points;
  int label = -1;
  std::vector<int> point_labels;

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  std::span<const double> flat() const { return {points.data(), size() * 3}; }
};

/// An element of SO(3).
class Rotation {
 public:
  Rotation() : m_(Eigen::Matrix3d::Identity()) {}

  /// Throws std::invalid_argument unless `m` is orthonormal with det +1 (tolerance 1e-12
  /// per entry, scaled up to `tol` if given).
  static Rotation from_matrix(const Eigen::Matrix3d& m, double tol = 1e-12);
  static Rotation about_z(double angle);

  const Eigen::Matrix3d& matrix() const { return m_; }
  Rotation inverse() const { return Rotation(m_.transpose()); }
  Rotation operator*(const Rotation& other) const { return Rotation(m_ * other.m_); }
  Eigen::Vector3d operator*(const Eigen::Vector3d& v) const { return m_ * v; }

 private:
  explicit Rotation(const Eigen::Matrix3d& m) : m_(m) {}
  Eigen::Matrix3d m_;
};

enum class Metric { coordinate, feature };

/// K nearest neighbors of every row, stored row-major as N x K indices.
struct KnnGraph {
  std::size_t n = 0;
  std::size_t k = 0;
  Metric metric = Metric::coordinate;
  std::vector<std::size_t> indices;

  std::span<const std::size_t> row(std::size_t i) const { return {indices.data() + i * k, k}; }
};

PointCloud make_cloud(const Points& points, int label = -1);

/// Translate the centroid to the origin and divide by the largest point norm.
/// Throws DegenerateInputError when all points coincide.
PointCloud center_and_scale(const PointCloud& cloud);

Eigen::Vector3d centroid(const PointCloud& cloud);

/// Haar-uniform rotation: normalized 4D Gaussian quaternion.
Rotation sample_rotation_so3(Rng& rng);
/// Rotation about the third axis by an angle uniform in [0, 2*pi).
Rotation sample_rotation_z(Rng& rng);
Rotation quaternion_to_rotation(double w, double x, double y, double z);

PointCloud apply_rotation(const PointCloud& cloud, const Rotation& r);

/// Exact brute-force KNN over an N x D row-major array; ties go to the lower index.
/// Requires 1 <= K < N.
KnnGraph knn_graph(std::span<const double> query, std::size_t n, std::size_t dim, std::size_t k,
                   Metric metric);
KnnGraph knn_graph(const PointCloud& cloud, std::size_t k);

PointCloud add_gaussian_noise(const PointCloud& cloud, double sigma, Rng& rng);
/// Remove `n_drop` uniformly chosen points; survivors keep their original order.
PointCloud drop_points(const PointCloud& cloud, std::size_t n_drop, Rng& rng);

/// Pairwise Euclidean distance matrix (row-major N x N).
std::vector<double> distance_matrix(const PointCloud& cloud);

}  // namespace rotinv
