#pragma once

#include <filesystem>
#include <vector>

#include "rotinv/frames.hpp"
#include "rotinv/geometry.hpp"
#include "rotinv/network.hpp"

namespace rotinv {

struct FrameFieldFiles {
  std::filesystem::path csv;
  std::filesystem::path ply;
};

/// Writes `<stem>.csv` (x,y,z,u1x..u3z, one row per point) and `<stem>.ply`
/// (ASCII; four vertices and three colored edges per point: u1 red, u2 green,
/// u3 blue, each `segment` long).
FrameFieldFiles write_frame_field(const std::filesystem::path& stem, const PointCloud& cloud,
                                  const std::vector<frames::Frame>& field, double segment = 0.05);

/// Runs the model once and exports the frames it used for `cloud`.
FrameFieldFiles export_frame_field(const net::Model& model, const PointCloud& cloud,
                                   const std::filesystem::path& stem, double segment = 0.05);

/// Reads back the CSV written by write_frame_field.
std::vector<std::pair<Eigen::Vector3d, frames::Frame>> read_frame_csv(
    const std::filesystem::path& path);

}  // namespace rotinv
