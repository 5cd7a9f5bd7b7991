#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace gsvton {

/// Single-channel raster, row-major, origin top-left.
template <class T>
struct Plane {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Plane() = default;
    Plane(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

    T& operator()(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    const T& operator()(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
    bool empty() const { return data.empty(); }
    bool same_size(int w, int h) const { return width == w && height == h; }
    bool operator==(const Plane&) const = default;
};

/// Binary map, values 0/1.
using Mask = Plane<std::uint8_t>;
/// Per-pixel region id.
using LabelMap = Plane<std::uint8_t>;
using ScalarMap = Plane<double>;

/// Linear RGB image, values nominally in [0,1], interleaved rgb.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, fill) {}
    Image(int w, int h, const Eigen::Vector3d& fill);

    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
    bool empty() const { return data.empty(); }
    bool same_size(const Image& o) const { return width == o.width && height == o.height; }

    double& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }

    Eigen::Vector3d pixel(int x, int y) const {
        const double* p = &data[(static_cast<size_t>(y) * width + x) * 3];
        return {p[0], p[1], p[2]};
    }
    void set_pixel(int x, int y, const Eigen::Vector3d& v) {
        double* p = &data[(static_cast<size_t>(y) * width + x) * 3];
        p[0] = v.x();
        p[1] = v.y();
        p[2] = v.z();
    }

    bool operator==(const Image&) const = default;
};

struct BoundingBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open [x0,x1) x [y0,y1)
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool operator==(const BoundingBox&) const = default;
};

// Rec.601 luma / full-range YCbCr. Chroma components span [-0.5, 0.5].
double luma(const Eigen::Vector3d& rgb);
Eigen::Vector3d rgb_to_ycbcr(const Eigen::Vector3d& rgb);
Eigen::Vector3d ycbcr_to_rgb(const Eigen::Vector3d& ycc);
ScalarMap luma_map(const Image& img);

Image crop(const Image& img, const BoundingBox& box);
Mask crop(const Mask& m, const BoundingBox& box);
std::optional<BoundingBox> mask_bbox(const Mask& m);
size_t mask_area(const Mask& m);

/// Disc-shaped morphology with integer radius.
Mask dilate(const Mask& m, int radius);
Mask erode(const Mask& m, int radius);
Mask mask_and(const Mask& a, const Mask& b);
Mask mask_or(const Mask& a, const Mask& b);
Mask label_mask(const LabelMap& labels, std::uint8_t label);

/// Mean (Cb, Cr) over mask pixels; nullopt when the mask is empty.
std::optional<Eigen::Vector2d> mean_chroma(const Image& img, const Mask& m);

} // namespace gsvton
