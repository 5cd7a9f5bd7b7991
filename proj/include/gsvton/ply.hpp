#pragma once

#include <filesystem>

#include "gsvton/scene.hpp"

namespace gsvton {

// Binary little-endian PLY with the standard 3DGS vertex properties:
//   x y z, [nx ny nz], f_dc_0..2, f_rest_*, opacity (logit), scale_0..2 (log), rot_0..3 (w x y z).
// f_rest is channel-major: f_rest[c * (K-1) + (k-1)] for coefficient k >= 1 of channel c.
// Properties are matched by name, so files with extra vertex properties load as well.
GaussianCloud load_ply(const std::filesystem::path& path);
void save_ply(const std::filesystem::path& path, const GaussianCloud& cloud);

} // namespace gsvton
