#include "rotinv/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "rotinv/errors.hpp"
#include "rotinv/kernels.hpp"

namespace rotinv {

Rotation Rotation::from_matrix(const Eigen::Matrix3d& m, double tol) {
  const Eigen::Matrix3d gram = m * m.transpose();
  if (!m.allFinite() || (gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol ||
      std::abs(m.determinant() - 1.0) > tol)
    throw std::invalid_argument("matrix is not a proper rotation");
  return Rotation(m);
}

Rotation Rotation::about_z(double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Eigen::Matrix3d m;
  m << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  return Rotation(m);
}

PointCloud make_cloud(const Points& points, int label) {
  PointCloud c;
  c.points = points;
  c.label = label;
  return c;
}

Eigen::Vector3d centroid(const PointCloud& cloud) {
  if (cloud.size() == 0) throw DegenerateInputError("empty point cloud");
  return cloud.points.colwise().mean().transpose();
}

PointCloud center_and_scale(const PointCloud& cloud) {
  if (cloud.size() == 0) throw DegenerateInputError("empty point cloud");
  if (!cloud.points.allFinite()) throw std::invalid_argument("non-finite coordinates");
  PointCloud out = cloud;
  const Eigen::RowVector3d c = cloud.points.colwise().mean();
  out.points.rowwise() -= c;
  const double scale = out.points.rowwise().norm().maxCoeff();
  if (!(scale > 0.0)) throw DegenerateInputError("all points coincide; scale is zero");
  out.points /= scale;
  return out;
}

Rotation quaternion_to_rotation(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  Eigen::Matrix3d m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),   //
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return Rotation::from_matrix(m, 1e-12);
}

Rotation sample_rotation_so3(Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (;;) {
    const double w = gauss(rng), x = gauss(rng), y = gauss(rng), z = gauss(rng);
    if (w * w + x * x + y * y + z * z > 1e-12) return quaternion_to_rotation(w, x, y, z);
  }
}

Rotation sample_rotation_z(Rng& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  return Rotation::about_z(angle(rng));
}

PointCloud apply_rotation(const PointCloud& cloud, const Rotation& r) {
  PointCloud out = cloud;
  out.points = cloud.points * r.matrix().transpose();
  return out;
}

KnnGraph knn_graph(std::span<const double> query, std::size_t n, std::size_t dim, std::size_t k,
                   Metric metric) {
  if (dim == 0) throw std::invalid_argument("knn_graph: dimension must be at least 1");
  if (k == 0) throw std::invalid_argument("knn_graph: K must be at least 1");
  if (k >= n) throw std::invalid_argument("knn_graph: K must be smaller than N");
  if (query.size() != n * dim) throw std::invalid_argument("knn_graph: query size mismatch");
  KnnGraph g;
  g.n = n;
  g.k = k;
  g.metric = metric;
  g.indices = kernels::knn(query, n, dim, k);
  return g;
}

KnnGraph knn_graph(const PointCloud& cloud, std::size_t k) {
  return knn_graph(cloud.flat(), cloud.size(), 3, k, Metric::coordinate);
}

PointCloud add_gaussian_noise(const PointCloud& cloud, double sigma, Rng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("noise sigma must be non-negative");
  PointCloud out = cloud;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> gauss(0.0, sigma);
  for (Eigen::Index i = 0; i < out.points.rows(); ++i)
    for (int d = 0; d < 3; ++d) out.points(i, d) += gauss(rng);
  return out;
}

PointCloud drop_points(const PointCloud& cloud, std::size_t n_drop, Rng& rng) {
  const std::size_t n = cloud.size();
  if (n_drop >= n) throw std::invalid_argument("drop_points: n_drop must be smaller than N");
  if (n_drop == 0) return cloud;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> keep(order.begin() + static_cast<std::ptrdiff_t>(n_drop), order.end());
  std::sort(keep.begin(), keep.end());
  PointCloud out;
  out.label = cloud.label;
  out.points.resize(static_cast<Eigen::Index>(keep.size()), 3);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.points.row(static_cast<Eigen::Index>(i)) =
        cloud.points.row(static_cast<Eigen::Index>(keep[i]));
    if (!cloud.point_labels.empty()) out.point_labels.push_back(cloud.point_labels[keep[i]]);
  }
  return out;
}

std::vector<double> distance_matrix(const PointCloud& cloud) {
  const std::size_t n = cloud.size();
  std::vector<double> d(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      d[i * n + j] = (cloud.points.row(static_cast<Eigen::Index>(i)) -
                      cloud.points.row(static_cast<Eigen::Index>(j)))
                         .norm();
  return d;
}

}  // namespace rotinv
