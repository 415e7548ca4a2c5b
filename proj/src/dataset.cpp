#include "rotinv/dataset.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "rotinv/cloud_io.hpp"
#include "rotinv/errors.hpp"

namespace rotinv {

namespace {

constexpr double kPi = std::numbers::pi;

Rng split_stream(std::uint64_t seed, std::uint64_t split) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split), 0x5eedu};
  return Rng(seq);
}

Eigen::RowVector3d sphere_point(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    Eigen::RowVector3d p(g(rng), g(rng), g(rng));
    const double n = p.norm();
    if (n > 1e-9) return p / n;
  }
}

Points sample_box(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> extent(0.45, 0.9), u(-1.0, 1.0), unit(0.0, 1.0);
  const Eigen::Vector3d h(1.0, extent(rng), extent(rng));
  // Face pairs orthogonal to x, y, z; area of a pair is proportional to the product of the other extents.
  const std::array<double, 3> area{h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
  const double total = area[0] + area[1] + area[2];
  Points pts(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const double pick = unit(rng) * total;
    const int axis = pick < area[0] ? 0 : (pick < area[0] + area[1] ? 1 : 2);
    Eigen::Vector3d p(u(rng) * h.x(), u(rng) * h.y(), u(rng) * h.z());
    p[axis] = (unit(rng) < 0.5 ? -1.0 : 1.0) * h[axis];
    pts.row(i) = p.transpose();
  }
  return pts;
}

Points sample_cylinder(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> radius(0.35, 0.6), unit(0.0, 1.0);
  const double r = radius(rng), half = 1.0;
  const double lateral = 2.0 * kPi * r * 2.0 * half, cap = kPi * r * r;
  Points pts(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const double pick = unit(rng) * (lateral + 2.0 * cap);
    const double phi = 2.0 * kPi * unit(rng);
    if (pick < lateral) {
      pts.row(i) << r * std::cos(phi), r * std::sin(phi), half * (2.0 * unit(rng) - 1.0);
    } else {
      const double rho = r * std::sqrt(unit(rng));
      pts.row(i) << rho * std::cos(phi), rho * std::sin(phi), pick < lateral + cap ? half : -half;
    }
  }
  return pts;
}

Points sample_torus(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> minor(0.2, 0.4), unit(0.0, 1.0);
  const double big = 1.0, r = minor(rng);
  Points pts(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < pts.rows();) {
    const double u = 2.0 * kPi * unit(rng), v = 2.0 * kPi * unit(rng);
    // Area element is proportional to (R + r cos v).
    if (unit(rng) * (big + r) > big + r * std::cos(v)) continue;
    pts.row(i++) << (big + r * std::cos(v)) * std::cos(u), (big + r * std::cos(v)) * std::sin(u),
        r * std::sin(v);
  }
  return pts;
}

PointCloud jittered(const PointCloud& c, Rng& rng) {
  std::uniform_real_distribution<double> aspect(0.9, 1.1), scale(0.8, 1.25);
  PointCloud out = c;
  const double s = scale(rng);
  const Eigen::RowVector3d a(aspect(rng) * s, aspect(rng) * s, aspect(rng) * s);
  out.points = out.points.array().rowwise() * a.array();
  return out;
}

void fill_split(std::vector<PointCloud>& out, std::size_t per_class, const DatasetSpec& spec,
                Rng rng) {
  for (std::size_t i = 0; i < per_class; ++i)
    for (int c = 0; c < kNumFamilies; ++c) {
      PointCloud cloud = sample_shape(static_cast<ShapeFamily>(c), spec.points, rng);
      if (spec.jitter) cloud = jittered(cloud, rng);
      cloud = center_and_scale(cloud);
      cloud.label = c;
      out.push_back(std::move(cloud));
    }
}

std::vector<double> histogram(const std::vector<double>& values, double hi, std::size_t bins) {
  std::vector<double> h(bins, 0.0);
  for (double v : values) {
    auto b = static_cast<std::size_t>(v / hi * static_cast<double>(bins));
    h[std::min(b, bins - 1)] += 1.0;
  }
  for (double& x : h) x /= static_cast<double>(values.size());
  return h;
}

}  // namespace

std::string_view to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::sphere: return "sphere";
    case ShapeFamily::box: return "box";
    case ShapeFamily::cylinder: return "cylinder";
    case ShapeFamily::torus: return "torus";
  }
  return "?";
}

PointCloud sample_shape(ShapeFamily family, std::size_t points, Rng& rng) {
  if (points == 0) throw std::invalid_argument("sample_shape: zero points");
  PointCloud c;
  c.label = static_cast<int>(family);
  switch (family) {
    case ShapeFamily::sphere:
      c.points.resize(static_cast<Eigen::Index>(points), 3);
      for (Eigen::Index i = 0; i < c.points.rows(); ++i) c.points.row(i) = sphere_point(rng);
      break;
    case ShapeFamily::box: c.points = sample_box(points, rng); break;
    case ShapeFamily::cylinder: c.points = sample_cylinder(points, rng); break;
    case ShapeFamily::torus: c.points = sample_torus(points, rng); break;
  }
  return c;
}

SyntheticDataset generate_dataset(const DatasetSpec& spec) {
  if (spec.points < 32) throw std::invalid_argument("dataset needs at least 32 points per cloud");
  if (spec.train_per_class == 0 || spec.test_per_class == 0)
    throw std::invalid_argument("dataset splits must be non-empty");
  SyntheticDataset d;
  d.spec = spec;
  fill_split(d.train, spec.train_per_class, spec, split_stream(spec.seed, 1));
  fill_split(d.test, spec.test_per_class, spec, split_stream(spec.seed, 2));
  return d;
}

std::vector<double> shape_descriptor(const PointCloud& cloud) {
  const PointCloud c = center_and_scale(cloud);
  const Eigen::Matrix3d cov = (c.points.transpose() * c.points) / static_cast<double>(c.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  std::vector<double> f{eig.eigenvalues()(2), eig.eigenvalues()(1), eig.eigenvalues()(0)};
  std::vector<double> radial(c.size());
  for (std::size_t i = 0; i < c.size(); ++i)
    radial[i] = c.points.row(static_cast<Eigen::Index>(i)).norm();
  std::vector<double> pair;
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = i + 1; j < c.size(); ++j)
      pair.push_back((c.points.row(static_cast<Eigen::Index>(i)) -
                      c.points.row(static_cast<Eigen::Index>(j)))
                         .norm());
  for (double v : histogram(radial, 1.0 + 1e-12, 10)) f.push_back(v);
  for (double v : histogram(pair, 2.0 + 1e-12, 10)) f.push_back(v);
  return f;
}

double descriptor_baseline_accuracy(const SyntheticDataset& data) {
  std::vector<std::vector<double>> train, test;
  for (const auto& c : data.train) train.push_back(shape_descriptor(c));
  for (const auto& c : data.test) test.push_back(shape_descriptor(c));
  const std::size_t dim = train.front().size();
  std::vector<double> mu(dim, 0.0), sd(dim, 0.0);
  for (const auto& f : train)
    for (std::size_t d = 0; d < dim; ++d) mu[d] += f[d] / static_cast<double>(train.size());
  for (const auto& f : train)
    for (std::size_t d = 0; d < dim; ++d)
      sd[d] += (f[d] - mu[d]) * (f[d] - mu[d]) / static_cast<double>(train.size());
  for (double& s : sd) s = std::sqrt(s) + 1e-12;
  auto standardize = [&](std::vector<double>& f) {
    for (std::size_t d = 0; d < dim; ++d) f[d] = (f[d] - mu[d]) / sd[d];
  };
  for (auto& f : train) standardize(f);
  for (auto& f : test) standardize(f);
  std::size_t correct = 0;
  for (std::size_t t = 0; t < test.size(); ++t) {
    double best = std::numeric_limits<double>::infinity();
    int label = -1;
    for (std::size_t i = 0; i < train.size(); ++i) {
      double s = 0.0;
      for (std::size_t d = 0; d < dim; ++d) s += (test[t][d] - train[i][d]) * (test[t][d] - train[i][d]);
      if (s < best) {
        best = s;
        label = data.train[i].label;
      }
    }
    if (label == data.test[t].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

void save_dataset(const std::filesystem::path& dir, const SyntheticDataset& data) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "index.csv");
  if (!index) throw IoError("cannot write " + (dir / "index.csv").string());
  index << "split,file,label\n";
  auto write_split = [&](const char* split, const std::vector<PointCloud>& clouds) {
    for (std::size_t i = 0; i < clouds.size(); ++i) {
      std::ostringstream name;
      name << split << '_' << i << ".lcpc";
      io::write_binary(dir / name.str(), clouds[i]);
      index << split << ',' << name.str() << ',' << clouds[i].label << '\n';
    }
  };
  write_split("train", data.train);
  write_split("test", data.test);
}

SyntheticDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.csv");
  if (!index) throw IoError("cannot open " + (dir / "index.csv").string());
  SyntheticDataset d;
  std::string line;
  std::getline(index, line);
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string split, file, label;
    std::getline(ss, split, ',');
    std::getline(ss, file, ',');
    std::getline(ss, label, ',');
    PointCloud c = io::read_cloud(dir / file);
    c.label = std::stoi(label);
    (split == "train" ? d.train : d.test).push_back(std::move(c));
  }
  if (d.train.empty() && d.test.empty()) throw IoError("empty dataset index in " + dir.string());
  if (!d.train.empty()) d.spec.points = d.train.front().size();
  return d;
}

}  // namespace rotinv
