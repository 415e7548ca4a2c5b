#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "rotinv/cloud_io.hpp"
#include "rotinv/errors.hpp"
#include "rotinv/geometry.hpp"
#include "rotinv/kernels.hpp"

using namespace rotinv;

namespace {

PointCloud random_cloud(std::size_t n, Rng& rng) {
  std::normal_distribution<double> g;
  Points p(n, 3);
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) p(i, d) = g(rng);
  return make_cloud(p);
}

void require_rotation(const Rotation& r) {
  const Eigen::Matrix3d m = r.matrix();
  CHECK((m * m.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(std::abs(m.determinant() - 1.0) <= 1e-12);
}

// Oracle: full sort of all distances with (distance, index) ordering.
std::vector<std::size_t> sorted_neighbors(const PointCloud& c, std::size_t i, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t j = 0; j < c.size(); ++j)
    if (j != i) d.emplace_back((c.points.row(i) - c.points.row(j)).squaredNorm(), j);
  std::sort(d.begin(), d.end());
  std::vector<std::size_t> out;
  for (std::size_t q = 0; q < k; ++q) out.push_back(d[q].second);
  return out;
}

}  // namespace

TEST_CASE("center_and_scale") {
  Points single(1, 3);
  single << 5, 5, 5;
  CHECK_THROWS_AS(center_and_scale(make_cloud(single)), DegenerateInputError);

  Points a(2, 3);
  a << 1, 0, 0, -1, 0, 0;
  auto ca = center_and_scale(make_cloud(a));
  CHECK((ca.points - a).cwiseAbs().maxCoeff() <= 1e-15);

  Points b(2, 3);
  b << 2, 0, 0, 0, 0, 0;
  auto cb = center_and_scale(make_cloud(b));
  CHECK((cb.points - a).cwiseAbs().maxCoeff() <= 1e-15);

  Rng rng(3);
  auto c = center_and_scale(random_cloud(50, rng));
  CHECK(centroid(c).norm() <= 1e-9);
  CHECK(std::abs(c.points.rowwise().norm().maxCoeff() - 1.0) <= 1e-9);
}

TEST_CASE("so3 sampling is a deterministic rotation") {
  Rng a(11), b(11);
  for (int i = 0; i < 20; ++i) {
    const Rotation ra = sample_rotation_so3(a), rb = sample_rotation_so3(b);
    require_rotation(ra);
    CHECK(ra.matrix() == rb.matrix());
  }
}

TEST_CASE("so3 sampling has the Haar trace mean") {
  // Haar measure: tr R = 1 + 2 cos(angle) with angle density (1 - cos) / pi,
  // so E[tr R] = 0 and Var[tr R] = 1. Compared against an independent
  // sampler: Euler-angle composition with the Haar density on the middle angle.
  constexpr int n = 10000;
  Rng rng(5), oracle_rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double mean = 0.0, oracle = 0.0;
  for (int i = 0; i < n; ++i) {
    mean += sample_rotation_so3(rng).matrix().trace();
    const double alpha = 2 * M_PI * u(oracle_rng), gamma = 2 * M_PI * u(oracle_rng);
    const double beta = std::acos(1.0 - 2.0 * u(oracle_rng));
    const Eigen::Matrix3d m = (Eigen::AngleAxisd(alpha, Eigen::Vector3d::UnitZ()) *
                               Eigen::AngleAxisd(beta, Eigen::Vector3d::UnitY()) *
                               Eigen::AngleAxisd(gamma, Eigen::Vector3d::UnitZ()))
                                  .toRotationMatrix();
    oracle += m.trace();
  }
  mean /= n;
  oracle /= n;
  const double three_sigma = 3.0 / std::sqrt(double(n));
  CHECK(std::abs(mean) <= three_sigma);
  CHECK(std::abs(oracle) <= three_sigma);
  CHECK(std::abs(mean - oracle) <= 2 * three_sigma);
}

TEST_CASE("z rotations") {
  CHECK(Rotation::about_z(0.0).matrix().isApprox(Eigen::Matrix3d::Identity(), 1e-15));
  const Eigen::Vector3d y = Rotation::about_z(M_PI / 2) * Eigen::Vector3d(1, 0, 0);
  CHECK((y - Eigen::Vector3d(0, 1, 0)).norm() <= 1e-15);
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const Rotation r = sample_rotation_z(rng);
    require_rotation(r);
    CHECK(r.matrix().row(2).isApprox(Eigen::RowVector3d(0, 0, 1)));
    CHECK(r.matrix().col(2).isApprox(Eigen::Vector3d(0, 0, 1)));
  }
}

TEST_CASE("from_matrix rejects non-rotations") {
  Eigen::Matrix3d reflect = Eigen::Matrix3d::Identity();
  reflect(2, 2) = -1;
  CHECK_THROWS_AS(Rotation::from_matrix(reflect), std::invalid_argument);
  CHECK_THROWS_AS(Rotation::from_matrix(2.0 * Eigen::Matrix3d::Identity()), std::invalid_argument);
  CHECK_NOTHROW(Rotation::from_matrix(Rotation::about_z(0.3).matrix()));
}

TEST_CASE("apply_rotation is an isometry") {
  Rng rng(9);
  const PointCloud c = random_cloud(40, rng);
  CHECK(apply_rotation(c, Rotation{}).points == c.points);
  const Rotation r = sample_rotation_so3(rng);
  const PointCloud back = apply_rotation(apply_rotation(c, r), r.inverse());
  CHECK((back.points - c.points).cwiseAbs().maxCoeff() <= 1e-12);
  const auto d0 = distance_matrix(c), d1 = distance_matrix(apply_rotation(c, r));
  double worst = 0.0;
  for (std::size_t i = 0; i < d0.size(); ++i) worst = std::max(worst, std::abs(d0[i] - d1[i]));
  CHECK(worst <= 1e-9);
}

TEST_CASE("knn on a line") {
  Points p(4, 3);
  p << 0, 0, 0, 1, 0, 0, 2, 0, 0, 3, 0, 0;
  const KnnGraph g = knn_graph(make_cloud(p), 1);
  CHECK(g.indices == std::vector<std::size_t>{1, 0, 1, 2});
  CHECK_THROWS_AS(knn_graph(make_cloud(p), 4), std::invalid_argument);
  CHECK_THROWS_AS(knn_graph(make_cloud(p), 0), std::invalid_argument);
}

TEST_CASE("knn with K = N - 1 lists every other point") {
  Rng rng(4);
  const PointCloud c = random_cloud(12, rng);
  const KnnGraph g = knn_graph(c, 11);
  for (std::size_t i = 0; i < 12; ++i) {
    std::set<std::size_t> s(g.row(i).begin(), g.row(i).end());
    CHECK(s.size() == 11);
    CHECK(!s.contains(i));
  }
}

TEST_CASE("knn matches a full sort, ties included") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    PointCloud c = random_cloud(60 + trial * 20, rng);
    if (trial % 2 == 0) c.points = (c.points * 2.0).array().round().matrix();  // lattice ties
    const std::size_t k = 7;
    const KnnGraph g = knn_graph(c, k);
    for (std::size_t i = 0; i < c.size(); ++i) {
      const auto want = sorted_neighbors(c, i, k);
      CHECK(std::equal(want.begin(), want.end(), g.row(i).begin()));
    }
  }
}

TEST_CASE("knn is unchanged by rotation") {
  Rng rng(12);
  const PointCloud c = random_cloud(80, rng);
  const PointCloud rc = apply_rotation(c, sample_rotation_so3(rng));
  CHECK(knn_graph(c, 8).indices == knn_graph(rc, 8).indices);
}

TEST_CASE("feature metric graph on higher dimensions") {
  // Five 4D rows; row 2 duplicates row 0 and row 3 is one unit away.
  const std::vector<double> rows = {0, 0, 0, 0, 0, 5, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 3};
  const KnnGraph g = knn_graph(rows, 5, 4, 2, Metric::feature);
  CHECK(g.metric == Metric::feature);
  CHECK(g.row(0)[0] == 2);
  CHECK(g.row(0)[1] == 3);
  CHECK(g.row(2)[0] == 0);
}

TEST_CASE("serial and parallel kernels agree bit for bit") {
  Rng rng(21);
  std::normal_distribution<double> g;
  const std::size_t r = 70, k = 33, n = 45;
  std::vector<double> a(r * k), b(k * n), gr(r * n);
  for (auto& x : a) x = g(rng);
  for (auto& x : b) x = g(rng);
  for (auto& x : gr) x = g(rng);

  std::vector<double> c1(r * n, 0.5), c2 = c1;
  kernels::serial::gemm_nn(r, k, n, a.data(), b.data(), c1.data());
  kernels::parallel::gemm_nn(r, k, n, a.data(), b.data(), c2.data());
  CHECK(c1 == c2);
  // Against a plain triple loop.
  double worst = 0.0;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.5;
      for (std::size_t q = 0; q < k; ++q) s += a[i * k + q] * b[q * n + j];
      worst = std::max(worst, std::abs(s - c1[i * n + j]));
    }
  CHECK(worst <= 1e-12);

  std::vector<double> d1(r * k, 0.0), d2 = d1;
  kernels::serial::gemm_nt(r, n, k, gr.data(), b.data(), d1.data());
  kernels::parallel::gemm_nt(r, n, k, gr.data(), b.data(), d2.data());
  CHECK(d1 == d2);

  std::vector<double> e1(k * n, 0.0), e2 = e1;
  kernels::serial::gemm_tn(r, k, n, a.data(), gr.data(), e1.data());
  kernels::parallel::gemm_tn(r, k, n, a.data(), gr.data(), e2.data());
  CHECK(e1 == e2);

  const PointCloud c = random_cloud(300, rng);
  CHECK(kernels::serial::knn(c.flat(), 300, 3, 16) == kernels::parallel::knn(c.flat(), 300, 3, 16));
}

TEST_CASE("gaussian noise") {
  Rng rng(1);
  const PointCloud c = random_cloud(100000, rng);
  Rng zero(3);
  CHECK(add_gaussian_noise(c, 0.0, zero).points == c.points);

  Rng a(4), b(4);
  const PointCloud na = add_gaussian_noise(c, 0.01, a), nb = add_gaussian_noise(c, 0.01, b);
  CHECK(na.points == nb.points);
  const Eigen::ArrayXd diff = Eigen::Map<const Eigen::ArrayXd>((na.points - c.points).eval().data(), 300000);
  const double mean = diff.mean();
  const double sd = std::sqrt((diff - mean).square().sum() / double(diff.size() - 1));
  CHECK(sd >= 0.0095);
  CHECK(sd <= 0.0105);
}

TEST_CASE("drop_points") {
  Rng rng(6);
  const PointCloud c = random_cloud(30, rng);
  CHECK(drop_points(c, 0, rng).points == c.points);
  CHECK_THROWS_AS(drop_points(c, 30, rng), std::invalid_argument);

  auto index_of = [&](const Eigen::RowVector3d& p) {
    for (std::size_t i = 0; i < c.size(); ++i)
      if (c.points.row(i) == p) return static_cast<long>(i);
    return -1L;
  };
  const PointCloud one = drop_points(c, 29, rng);
  REQUIRE(one.size() == 1);
  CHECK(index_of(one.points.row(0)) >= 0);

  const PointCloud some = drop_points(c, 11, rng);
  CHECK(some.size() == 19);
  long last = -1;
  for (std::size_t i = 0; i < some.size(); ++i) {
    const long at = index_of(some.points.row(i));
    CHECK(at > last);  // subset, original order kept
    last = at;
  }
}

TEST_CASE("cloud files round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "rotinv_test_geometry";
  std::filesystem::create_directories(dir);
  Rng rng(14);
  PointCloud c = random_cloud(25, rng);

  io::write_cloud(dir / "c.xyz", c);
  const PointCloud t = io::read_cloud(dir / "c.xyz");
  CHECK((t.points - c.points).cwiseAbs().maxCoeff() <= 1e-15);

  io::write_cloud(dir / "c.lcpc", c);
  const PointCloud b = io::read_cloud(dir / "c.lcpc");
  REQUIRE(b.size() == 25);
  CHECK((b.points - c.points).cwiseAbs().maxCoeff() <= 1e-6);  // stored as f32

  c.point_labels.assign(25, 3);
  io::write_text(dir / "labeled.txt", c);
  CHECK(io::read_text(dir / "labeled.txt").point_labels == c.point_labels);
  std::filesystem::remove_all(dir);
}
