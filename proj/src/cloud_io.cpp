#include "rotinv/cloud_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "rotinv/errors.hpp"

namespace rotinv::io {

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary cloud format assumes a little-endian host");

constexpr std::array<char, 4> kMagic{'L', 'C', 'P', 'C'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw IoError("truncated binary cloud: " + path.string());
  return v;
}

}  // namespace

PointCloud read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<double> xyz;
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x >> y >> z))
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected x y z");
    xyz.insert(xyz.end(), {x, y, z});
    int label;
    if (ss >> label) labels.push_back(label);
  }
  const std::size_t n = xyz.size() / 3;
  if (n == 0) throw IoError("no points in " + path.string());
  if (!labels.empty() && labels.size() != n)
    throw IoError("labels present on some lines only: " + path.string());
  PointCloud cloud;
  cloud.points = Eigen::Map<const Points>(xyz.data(), static_cast<Eigen::Index>(n), 3);
  cloud.point_labels = std::move(labels);
  return cloud;
}

void write_text(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  const bool labelled = cloud.point_labels.size() == cloud.size();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << cloud.points(r, 0) << ' ' << cloud.points(r, 1) << ' ' << cloud.points(r, 2);
    if (labelled) out << ' ' << cloud.point_labels[i];
    out << '\n';
  }
}

PointCloud read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kMagic)
    throw IoError("bad magic in binary cloud: " + path.string());
  const auto count = get<std::uint32_t>(in, path);
  PointCloud cloud;
  cloud.points.resize(count, 3);
  for (std::uint32_t i = 0; i < count; ++i)
    for (int d = 0; d < 3; ++d) cloud.points(i, d) = get<float>(in, path);
  return cloud;
}

void write_binary(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic.data(), 4);
  put(out, static_cast<std::uint32_t>(cloud.size()));
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (int d = 0; d < 3; ++d)
      put(out, static_cast<float>(cloud.points(static_cast<Eigen::Index>(i), d)));
}

PointCloud read_cloud(const std::filesystem::path& path) {
  return path.extension() == ".lcpc" ? read_binary(path) : read_text(path);
}

void write_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  if (path.extension() == ".lcpc")
    write_binary(path, cloud);
  else
    write_text(path, cloud);
}

}  // namespace rotinv::io
