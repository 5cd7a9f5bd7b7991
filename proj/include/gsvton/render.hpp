#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "gsvton/image.hpp"
#include "gsvton/scene.hpp"

namespace gsvton {

struct RenderSettings {
    Vec3 background = Vec3::Zero();
    double near_plane = 0.01;
    /// Gaussians whose center projects further than this multiple of the half
    /// field of view off-axis are culled.
    double guard_band = 1.3;
    double low_pass = 0.3;        // pixels^2 added to cov2d
    double alpha_max = 0.99;
    double alpha_min = 1.0 / 255.0;
    int tile_size = 16;
};

/// Screen-space footprint of one Gaussian.
struct Splat2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();
    Mat2 conic = Mat2::Identity();  // cov2d^-1
    double depth = 0.0;
    Vec3 color = Vec3::Zero();
    double alpha_base = 0.0;
    int source_index = -1;
    int radius = 0;  // conservative pixel radius of the alpha >= alpha_min footprint
};

struct RenderedImage {
    Image pixels;
    ScalarMap final_transmittance;
};

/// Projects a Gaussian to the image plane; nullopt when culled (behind the
/// near plane, outside the guard band, or too transparent to ever contribute).
std::optional<Splat2D> project_gaussian(const Gaussian& g, const CameraView& cam, int source_index = 0,
                                        const RenderSettings& settings = {});

struct CompositeResult {
    Vec3 color = Vec3::Zero();
    double transmittance = 1.0;
};

/// Front-to-back alpha compositing of depth-ascending (alpha, color) pairs over `background`.
CompositeResult composite_pixel(std::span<const std::pair<double, Vec3>> splats, const Vec3& background,
                                double alpha_max = 0.99);

/// All splats of the cloud for this camera, sorted by (depth, source_index).
std::vector<Splat2D> project_cloud(const GaussianCloud& cloud, const CameraView& cam, const RenderSettings& settings);

RenderedImage render_view(const GaussianCloud& cloud, const CameraView& cam, const RenderSettings& settings = {});

/// Per-pixel accumulated compositing weight of each label group. `labels[i]`
/// is the group of Gaussian i; result[k] is the weight map of group k.
std::vector<ScalarMap> render_group_weights(const GaussianCloud& cloud, const CameraView& cam,
                                            std::span<const int> labels, int group_count,
                                            const RenderSettings& settings = {});

/// Gradient of a scalar loss with respect to every Gaussian parameter.
struct GaussianGradient {
    Vec3 position = Vec3::Zero();
    Vec4 rotation = Vec4::Zero();
    Vec3 scale = Vec3::Zero();
    double opacity = 0.0;
    std::vector<Vec3> sh;
};

struct CloudGradient {
    std::vector<GaussianGradient> gaussians;

    explicit CloudGradient(const GaussianCloud& cloud);
    CloudGradient& operator+=(const CloudGradient& o);
};

/// Back-propagates dL/dpixel (same layout as RenderedImage::pixels) through
/// compositing, projection and SH evaluation.
CloudGradient render_backward(const GaussianCloud& cloud, const CameraView& cam, const Image& grad_pixels,
                              const RenderSettings& settings = {});

} // namespace gsvton
