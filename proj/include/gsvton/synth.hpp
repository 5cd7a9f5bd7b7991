#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "gsvton/aux.hpp"
#include "gsvton/dataset.hpp"
#include "gsvton/scene.hpp"

namespace gsvton {

struct MannequinConfig {
    int views = 24;
    int width = 128;
    int height = 128;
    double focal = 200.0;
    double ring_radius = 4.0;
    double ring_height = 0.3;
    std::uint64_t seed = 0;
};

/// Fiducial face markers: an ellipse outline plus two eye dots, facing +z.
struct FaceMarkers {
    Vec3 center = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
    std::vector<Vec3> keypoints;  // outline points followed by the two eyes
};

/// Procedural mannequin (y up) with per-Gaussian parsing labels and a camera ring.
struct Mannequin {
    MannequinConfig config;
    GaussianCloud cloud;
    std::vector<int> labels;  // ParsingLabel per Gaussian
    FaceMarkers face;
    std::vector<Vec3> joints;  // pose keypoints in world space
    std::vector<CameraView> cameras;

    IndexSet group(ParsingLabel label) const;
};

Mannequin make_mannequin(const MannequinConfig& config = {});

/// Ring cameras: view i sits at angle 2*pi*i/views around the y axis, view 0 in front (+z).
std::vector<CameraView> ring_cameras(const MannequinConfig& config);

/// Per-pixel argmax over group weights, with residual transmittance counted as background.
LabelMap parsing_map(const GaussianCloud& cloud, const std::vector<int>& labels, const CameraView& cam);
/// Projected face markers, or none when the face points away or leaves the frame.
std::optional<std::vector<Vec2>> face_keypoints(const FaceMarkers& face, const CameraView& cam);
std::vector<Vec2> pose_keypoints(const std::vector<Vec3>& joints, const CameraView& cam);

/// Renders every ring view (quantized to 8-bit sRGB so a PNG round trip is exact)
/// and attaches analytic parsing, pose and face metadata.
ViewDataset make_mannequin_dataset(const Mannequin& m);

/// In-shop garment photo: folds of one base color filling the frame.
Image make_garment_image(const Vec3& base_rgb, int size = 64, std::uint64_t seed = 0);
Vec3 red_garment_color();
Vec3 decoy_garment_color();

/// Writes dataset.json (+ images, aux), scene.ply, groups.json and garment_red.png under `dir`.
void write_mannequin(const Mannequin& m, const std::filesystem::path& dir);

} // namespace gsvton
