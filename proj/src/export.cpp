#include "rotinv/export.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rotinv/errors.hpp"

namespace rotinv {

FrameFieldFiles write_frame_field(const std::filesystem::path& stem, const PointCloud& cloud,
                                  const std::vector<frames::Frame>& field, double segment) {
  if (field.size() != cloud.size())
    throw std::invalid_argument("frame field has " + std::to_string(field.size()) +
                                " frames for " + std::to_string(cloud.size()) + " points");
  FrameFieldFiles files{stem, stem};
  files.csv += ".csv";
  files.ply += ".ply";
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());

  std::ofstream csv(files.csv);
  if (!csv) throw IoError("cannot write " + files.csv.string());
  csv.precision(17);
  csv << "x,y,z,u1x,u1y,u1z,u2x,u2y,u2z,u3x,u3y,u3z\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto p = cloud.points.row(static_cast<Eigen::Index>(i));
    csv << p(0) << ',' << p(1) << ',' << p(2);
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 3; ++r) csv << ',' << field[i].basis(r, c);
    csv << '\n';
  }

  std::ofstream ply(files.ply);
  if (!ply) throw IoError("cannot write " + files.ply.string());
  ply.precision(9);
  const std::size_t n = cloud.size();
  ply << "ply\nformat ascii 1.0\n"
      << "element vertex " << 4 * n << "\nproperty float x\nproperty float y\nproperty float z\n"
      << "element edge " << 3 * n
      << "\nproperty int vertex1\nproperty int vertex2\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d p = cloud.points.row(static_cast<Eigen::Index>(i)).transpose();
    ply << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
    for (int c = 0; c < 3; ++c) {
      const Eigen::Vector3d q = p + segment * field[i].basis.col(c);
      ply << q.x() << ' ' << q.y() << ' ' << q.z() << '\n';
    }
  }
  static constexpr int colors[3][3] = {{255, 0, 0}, {0, 255, 0}, {0, 0, 255}};
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c)
      ply << 4 * i << ' ' << 4 * i + 1 + c << ' ' << colors[c][0] << ' ' << colors[c][1] << ' '
          << colors[c][2] << '\n';
  if (!csv || !ply) throw IoError("write failed for " + stem.string());
  return files;
}

FrameFieldFiles export_frame_field(const net::Model& model, const PointCloud& cloud,
                                   const std::filesystem::path& stem, double segment) {
  const auto r = model.forward(cloud);
  return write_frame_field(stem, cloud, frames::to_frames(r.frames, model.config().frame_kind),
                           segment);
}

std::vector<std::pair<Eigen::Vector3d, frames::Frame>> read_frame_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::pair<Eigen::Vector3d, frames::Frame>> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    double v[12];
    for (double& x : v) {
      if (!std::getline(ss, cell, ',')) throw IoError("short frame row in " + path.string());
      x = std::stod(cell);
    }
    frames::Frame f;
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 3; ++r) f.basis(r, c) = v[3 + 3 * c + r];
    out.emplace_back(Eigen::Vector3d(v[0], v[1], v[2]), f);
  }
  return out;
}

}  // namespace rotinv
