#include "gsvton/image.hpp"

#include <algorithm>

#include "gsvton/errors.hpp"

namespace gsvton {

Image::Image(int w, int h, const Eigen::Vector3d& fill) : Image(w, h) {
    for (size_t i = 0; i < pixel_count(); ++i) {
        data[i * 3 + 0] = fill.x();
        data[i * 3 + 1] = fill.y();
        data[i * 3 + 2] = fill.z();
    }
}

double luma(const Eigen::Vector3d& rgb) {
    return 0.299 * rgb.x() + 0.587 * rgb.y() + 0.114 * rgb.z();
}

Eigen::Vector3d rgb_to_ycbcr(const Eigen::Vector3d& rgb) {
    const double y = luma(rgb);
    return {y, (rgb.z() - y) / 1.772, (rgb.x() - y) / 1.402};
}

Eigen::Vector3d ycbcr_to_rgb(const Eigen::Vector3d& ycc) {
    const double y = ycc.x(), cb = ycc.y(), cr = ycc.z();
    const double r = y + 1.402 * cr;
    const double b = y + 1.772 * cb;
    const double g = (y - 0.299 * r - 0.114 * b) / 0.587;
    return {r, g, b};
}

ScalarMap luma_map(const Image& img) {
    ScalarMap out(img.width, img.height);
    for (size_t i = 0; i < img.pixel_count(); ++i)
        out.data[i] = 0.299 * img.data[i * 3] + 0.587 * img.data[i * 3 + 1] + 0.114 * img.data[i * 3 + 2];
    return out;
}

namespace {

void check_box(const BoundingBox& box, int w, int h) {
    if (box.x0 < 0 || box.y0 < 0 || box.x1 > w || box.y1 > h || box.x0 >= box.x1 || box.y0 >= box.y1)
        throw InvalidParameter("crop box outside image");
}

} // namespace

Image crop(const Image& img, const BoundingBox& box) {
    check_box(box, img.width, img.height);
    Image out(box.width(), box.height());
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            out.set_pixel(x, y, img.pixel(x + box.x0, y + box.y0));
    return out;
}

Mask crop(const Mask& m, const BoundingBox& box) {
    check_box(box, m.width, m.height);
    Mask out(box.width(), box.height());
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            out(x, y) = m(x + box.x0, y + box.y0);
    return out;
}

std::optional<BoundingBox> mask_bbox(const Mask& m) {
    BoundingBox b{m.width, m.height, 0, 0};
    bool any = false;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m(x, y)) {
                any = true;
                b.x0 = std::min(b.x0, x);
                b.y0 = std::min(b.y0, y);
                b.x1 = std::max(b.x1, x + 1);
                b.y1 = std::max(b.y1, y + 1);
            }
    if (!any) return std::nullopt;
    return b;
}

size_t mask_area(const Mask& m) {
    return static_cast<size_t>(std::count_if(m.data.begin(), m.data.end(), [](auto v) { return v != 0; }));
}

namespace {

Mask morph(const Mask& m, int radius, bool grow) {
    if (radius <= 0) return m;
    Mask out(m.width, m.height);
    const int r2 = radius * radius;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            bool hit = !grow;
            for (int dy = -radius; dy <= radius && hit != grow; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    if (dx * dx + dy * dy > r2) continue;
                    const int sx = x + dx, sy = y + dy;
                    const bool inside = sx >= 0 && sy >= 0 && sx < m.width && sy < m.height;
                    const bool v = inside && m(sx, sy) != 0;
                    if (grow && v) { hit = true; break; }
                    if (!grow && !v) { hit = false; break; }
                }
            out(x, y) = hit ? 1 : 0;
        }
    return out;
}

} // namespace

Mask dilate(const Mask& m, int radius) { return morph(m, radius, true); }
Mask erode(const Mask& m, int radius) { return morph(m, radius, false); }

Mask mask_and(const Mask& a, const Mask& b) {
    if (!a.same_size(b.width, b.height)) throw DimensionMismatch("mask_and: size mismatch");
    Mask out(a.width, a.height);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = (a.data[i] && b.data[i]) ? 1 : 0;
    return out;
}

Mask mask_or(const Mask& a, const Mask& b) {
    if (!a.same_size(b.width, b.height)) throw DimensionMismatch("mask_or: size mismatch");
    Mask out(a.width, a.height);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = (a.data[i] || b.data[i]) ? 1 : 0;
    return out;
}

Mask label_mask(const LabelMap& labels, std::uint8_t label) {
    Mask out(labels.width, labels.height);
    for (size_t i = 0; i < labels.data.size(); ++i) out.data[i] = labels.data[i] == label ? 1 : 0;
    return out;
}

std::optional<Eigen::Vector2d> mean_chroma(const Image& img, const Mask& m) {
    if (!m.same_size(img.width, img.height)) throw DimensionMismatch("mean_chroma: size mismatch");
    Eigen::Vector2d acc = Eigen::Vector2d::Zero();
    size_t n = 0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            if (!m(x, y)) continue;
            const Eigen::Vector3d ycc = rgb_to_ycbcr(img.pixel(x, y));
            acc += Eigen::Vector2d(ycc.y(), ycc.z());
            ++n;
        }
    if (n == 0) return std::nullopt;
    return acc / static_cast<double>(n);
}

} // namespace gsvton
