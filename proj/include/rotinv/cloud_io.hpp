#pragma once

#include <filesystem>
#include <vector>

#include "rotinv/geometry.hpp"

namespace rotinv::io {

/// Whitespace-delimited text, one point per line: `x y z [label]`.
/// Blank lines and lines starting with '#' are skipped. Either every point
/// carries a label or none does.
PointCloud read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const PointCloud& cloud);

/// Binary layout (little-endian): "LCPC", u32 count, count x (f32 x, f32 y, f32 z).
PointCloud read_binary(const std::filesystem::path& path);
void write_binary(const std::filesystem::path& path, const PointCloud& cloud);

/// Dispatches on extension: ".lcpc" is binary, anything else is text.
PointCloud read_cloud(const std::filesystem::path& path);
void write_cloud(const std::filesystem::path& path, const PointCloud& cloud);

}  // namespace rotinv::io
