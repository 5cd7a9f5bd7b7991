#include "gsvton/refine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gsvton/errors.hpp"
#include "gsvton/remote.hpp"

namespace gsvton {

// ---------------------------------------------------------------------------
// Face

namespace {

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

double segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
    const Vec2 ab = b - a;
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (p - (a + t * ab)).norm();
}

// Distance from p to the convex polygon `hull` (counter-clockwise), 0 inside.
double hull_distance(const std::vector<Vec2>& hull, const Vec2& p) {
    bool inside = true;
    for (size_t i = 0; i < hull.size(); ++i)
        if (cross(hull[i], hull[(i + 1) % hull.size()], p) < 0.0) {
            inside = false;
            break;
        }
    if (inside) return 0.0;
    double d = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < hull.size(); ++i) d = std::min(d, segment_distance(p, hull[i], hull[(i + 1) % hull.size()]));
    return d;
}

} // namespace

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
    std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
        return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
    });
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 3) return pts;
    std::vector<Vec2> hull(2 * pts.size());
    size_t k = 0;
    for (size_t i = 0; i < pts.size(); ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
        hull[k++] = pts[i];
    }
    for (size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

ScalarMap FaceNet::alpha(int width, int height) const {
    if (keypoints.size() < 3) throw InvalidParameter("face needs at least 3 keypoints");
    const auto hull = convex_hull(keypoints);
    if (hull.size() < 3) throw InvalidParameter("face keypoints are collinear");
    if (dilation < 0.0 || feather < 0.0) throw InvalidParameter("face dilation and feather must be >= 0");
    ScalarMap a(width, height, 0.0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double d = hull_distance(hull, Vec2(x, y)) - dilation;
            if (d <= 0.0) a(x, y) = 1.0;
            else if (d < feather) a(x, y) = 1.0 - d / feather;
        }
    return a;
}

Mask FaceNet::hull_mask(int width, int height) const {
    const ScalarMap a = alpha(width, height);
    Mask m(width, height, 0);
    for (size_t i = 0; i < a.data.size(); ++i) m.data[i] = a.data[i] == 1.0 ? 1 : 0;
    return m;
}

MetadataFaceDetector MetadataFaceDetector::from_dataset(const ViewDataset& dataset) {
    std::map<int, std::vector<Vec2>> kp;
    for (const auto& r : dataset.records())
        if (r.face_keypoints) kp[r.view_index] = *r.face_keypoints;
    return MetadataFaceDetector(std::move(kp));
}

std::optional<FaceNet> MetadataFaceDetector::detect(const Image&, int view_index) const {
    auto it = keypoints_.find(view_index);
    if (it == keypoints_.end() || it->second.size() < 3) return std::nullopt;
    FaceNet f;
    f.keypoints = it->second;
    f.view_index = view_index;
    return f;
}

std::optional<FaceNet> RemoteFaceDetector::detect(const Image& image, int view_index) const {
    const auto kp = remote_face(RemoteClient(endpoint_, timeout_), image, view_index);
    if (!kp || kp->size() < 3) return std::nullopt;
    FaceNet f;
    f.keypoints = *kp;
    f.view_index = view_index;
    return f;
}

std::optional<FaceNet> detect_face_keypoints(const FaceDetector& detector, const Image& image, int view_index) {
    return detector.detect(image, view_index);
}

Image face_composite(const Image& original, const Image& edited, const std::optional<FaceNet>& face, int view_index) {
    if (!original.same_size(edited)) throw DimensionMismatch("face_composite: original and edited differ in size");
    if (!face) return edited;
    if (face->view_index != view_index)
        throw PreconditionError(fmt::format("face_composite: face of view {} applied to view {}", face->view_index,
                                            view_index));
    const ScalarMap a = face->alpha(original.width, original.height);
    Image out = edited;
    for (int y = 0; y < original.height; ++y)
        for (int x = 0; x < original.width; ++x) {
            const double w = a(x, y);
            if (w == 0.0) continue;
            if (w == 1.0) out.set_pixel(x, y, original.pixel(x, y));
            else out.set_pixel(x, y, original.pixel(x, y) + (1.0 - w) * (edited.pixel(x, y) - original.pixel(x, y)));
        }
    return out;
}

// ---------------------------------------------------------------------------
// dHash

namespace {

// Fractional coverage of source pixels [0, n) by `cells` equal bins.
std::vector<std::vector<std::pair<int, double>>> area_weights(int n, int cells) {
    std::vector<std::vector<std::pair<int, double>>> w(static_cast<size_t>(cells));
    const double step = static_cast<double>(n) / cells;
    for (int c = 0; c < cells; ++c) {
        const double a = c * step, b = (c + 1) * step;
        for (int i = static_cast<int>(std::floor(a)); i < n && i < b; ++i) {
            const double overlap = std::min<double>(b, i + 1) - std::max<double>(a, i);
            if (overlap > 0.0) w[static_cast<size_t>(c)].push_back({i, overlap / step});
        }
    }
    return w;
}

} // namespace

HashCode dhash(const Image& image) {
    if (image.empty()) throw InvalidParameter("dhash: empty image");
    constexpr int kCols = 9, kRows = 8;
    const ScalarMap lum = luma_map(image);
    const auto wx = area_weights(image.width, kCols);
    const auto wy = area_weights(image.height, kRows);
    double grid[kRows][kCols];
    for (int r = 0; r < kRows; ++r)
        for (int c = 0; c < kCols; ++c) {
            double v = 0.0;
            for (const auto& [y, fy] : wy[static_cast<size_t>(r)])
                for (const auto& [x, fx] : wx[static_cast<size_t>(c)]) v += fy * fx * lum(x, y);
            grid[r][c] = v;
        }
    HashCode h;
    for (int r = 0; r < kRows; ++r)
        for (int c = 0; c < kCols - 1; ++c)
            if (grid[r][c] < grid[r][c + 1]) h.bits |= std::uint64_t{1} << (r * 8 + c);
    return h;
}

double similarity(HashCode a, HashCode b) { return 1.0 - std::popcount(a.bits ^ b.bits) / 64.0; }

GarmentMask GarmentMask::make(const Image& image, const Mask& mask, int view_index) {
    if (!mask.same_size(image.width, image.height)) throw DimensionMismatch("garment mask size differs from image");
    GarmentMask g;
    g.mask = mask;
    g.view_index = view_index;
    g.masked_image = Image(image.width, image.height);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            if (mask(x, y)) g.masked_image.set_pixel(x, y, image.pixel(x, y));
    return g;
}

HashCode GarmentMask::hash() const {
    const auto box = mask_bbox(mask);
    if (!box) return HashCode{};
    return dhash(crop(masked_image, *box));
}

MetadataSegmenter MetadataSegmenter::from_dataset(const ViewDataset& dataset) {
    std::map<int, LabelMap> p;
    for (const auto& r : dataset.records())
        if (r.aux) p[r.view_index] = r.aux->parsing;
    return MetadataSegmenter(std::move(p));
}

Mask MetadataSegmenter::segment(const Image& image, int view_index, TargetRegion region) const {
    auto it = parsing_.find(view_index);
    if (it == parsing_.end()) throw MissingAux(fmt::format("no parsing map for view {}", view_index));
    if (!it->second.same_size(image.width, image.height)) throw DimensionMismatch("parsing map size differs from image");
    return region_mask(it->second, region);
}

Mask RemoteSegmenter::segment(const Image& image, int view_index, TargetRegion region) const {
    return remote_segment(RemoteClient(endpoint_, timeout_), image, region, view_index);
}

std::vector<int> select_outlier_views(const std::vector<GarmentMask>& masked, double tau) {
    for (size_t i = 1; i < masked.size(); ++i)
        if (masked[i].view_index <= masked[i - 1].view_index)
            throw PreconditionError("select_outlier_views: masks must be ordered by view index");
    if (masked.size() < 3) {
        spdlog::warn("select_outlier_views: {} views, at least 3 are needed for a triple", masked.size());
        return {};
    }
    std::vector<HashCode> hashes;
    for (const auto& m : masked) hashes.push_back(m.hash());

    std::vector<int> flagged;
    const size_t groups = masked.size() / 3;
    for (size_t g = 0; g < groups; ++g) {
        const size_t begin = g * 3;
        const size_t end = g + 1 == groups ? masked.size() : begin + 3;
        size_t worst = begin;
        double worst_best = std::numeric_limits<double>::infinity();
        for (size_t i = begin; i < end; ++i) {
            double best = -std::numeric_limits<double>::infinity();
            for (size_t j = begin; j < end; ++j)
                if (j != i) best = std::max(best, similarity(hashes[i], hashes[j]));
            if (best < worst_best) {
                worst_best = best;
                worst = i;
            }
        }
        if (worst_best < tau) flagged.push_back(masked[worst].view_index);
    }
    return flagged;
}

std::map<int, Image> re_edit_images(const std::vector<int>& flagged, const std::map<int, Image>& stage2,
                                    const EditorBinding& binding, const GarmentPrompt& prompt,
                                    const std::map<int, AuxInputs>& aux, int round) {
    EditorBinding b = binding;
    b.seed = binding.seed ^ static_cast<std::uint64_t>(round) ^ 1u;
    std::map<int, Image> out;
    std::vector<std::string> failures;
    for (int v : flagged) {
        auto img = stage2.find(v);
        auto ax = aux.find(v);
        if (img == stage2.end() || ax == aux.end())
            throw PreconditionError(fmt::format("re_edit: view {} has no Stage2 image or aux inputs", v));
        std::string last_error;
        bool done = false;
        for (int attempt = 0; attempt <= b.retries && !done; ++attempt) {
            try {
                EditOptions opt;
                opt.view_index = v;
                opt.allow_sabotage = false;
                out[v] = edit_view(b, img->second, prompt, ax->second, opt);
                done = true;
            } catch (const EditorUnavailable& e) {
                last_error = e.what();
                spdlog::warn("re_edit: view {} attempt {} failed: {}", v, attempt + 1, last_error);
            }
        }
        if (!done) failures.push_back(fmt::format("view {}: {}", v, last_error));
    }
    if (!failures.empty()) {
        std::string msg = "re-edit failed after retries";
        for (const auto& f : failures) msg += "; " + f;
        throw EditorUnavailable(msg);
    }
    return out;
}

std::map<int, Image> re_edit(const std::vector<int>& flagged, ViewDataset& dataset, const EditorBinding& binding,
                             const GarmentPrompt& prompt, const std::map<int, AuxInputs>& aux, int round) {
    std::map<int, Image> stage2;
    for (int v : flagged) {
        const ViewRecord r = dataset.record(v);
        auto it = r.images.find(EditStage::stage2);
        if (it == r.images.end()) throw PreconditionError(fmt::format("re_edit: view {} has no Stage2 image", v));
        stage2[v] = *it->second;
    }
    auto out = re_edit_images(flagged, stage2, binding, prompt, aux, round);
    for (const auto& [v, img] : out) dataset.commit_stage(v, EditStage::stage3, img, round);
    return out;
}

// ---------------------------------------------------------------------------
// Degradation operators

DegradationOp DegradationOp::identity() { return {}; }

DegradationOp DegradationOp::masked(Mask keep) {
    DegradationOp op;
    op.kind_ = Kind::mask;
    op.mask_ = std::move(keep);
    return op;
}

DegradationOp DegradationOp::downsample(int factor) {
    if (factor < 1) throw InvalidParameter("downsample factor must be >= 1");
    DegradationOp op;
    op.kind_ = Kind::downsample;
    op.factor_ = factor;
    return op;
}

void DegradationOp::check_signal(const Image& x) const {
    if (kind_ == Kind::mask && !mask_.same_size(x.width, x.height))
        throw DimensionMismatch("degradation mask does not match the image");
    if (kind_ == Kind::downsample && (x.width % factor_ || x.height % factor_))
        throw DimensionMismatch(fmt::format("image {}x{} is not divisible by {}", x.width, x.height, factor_));
}

void DegradationOp::check_measurement(const Image& y) const {
    if (kind_ == Kind::mask && !mask_.same_size(y.width, y.height))
        throw DimensionMismatch("measurement does not match the degradation mask");
}

Image DegradationOp::apply(const Image& x) const {
    check_signal(x);
    switch (kind_) {
    case Kind::identity: return x;
    case Kind::mask: {
        Image out(x.width, x.height);
        for (size_t p = 0; p < x.pixel_count(); ++p)
            if (mask_.data[p])
                for (int c = 0; c < 3; ++c) out.data[p * 3 + c] = x.data[p * 3 + c];
        return out;
    }
    case Kind::downsample: {
        const int s = factor_;
        Image out(x.width / s, x.height / s);
        const double inv = 1.0 / (s * s);
        for (int y = 0; y < out.height; ++y)
            for (int xx = 0; xx < out.width; ++xx)
                for (int c = 0; c < 3; ++c) {
                    double sum = 0.0;
                    for (int j = 0; j < s; ++j)
                        for (int i = 0; i < s; ++i) sum += x.at(xx * s + i, y * s + j, c);
                    out.at(xx, y, c) = sum * inv;
                }
        return out;
    }
    }
    return x;
}

Image DegradationOp::pseudo_inverse(const Image& y) const {
    check_measurement(y);
    switch (kind_) {
    case Kind::identity: return y;
    case Kind::mask: return apply(y);
    case Kind::downsample: {
        const int s = factor_;
        Image out(y.width * s, y.height * s);
        for (int yy = 0; yy < out.height; ++yy)
            for (int x = 0; x < out.width; ++x)
                for (int c = 0; c < 3; ++c) out.at(x, yy, c) = y.at(x / s, yy / s, c);
        return out;
    }
    }
    return y;
}

Image DegradationOp::projector(const Image& x) const { return pseudo_inverse(apply(x)); }

Prior smoothing_prior(int iterations, double range_sigma) {
    if (iterations < 0 || !(range_sigma > 0.0)) throw InvalidParameter("smoothing prior parameters out of range");
    return [iterations, range_sigma](const Image& in) {
        Image cur = in;
        const double inv_r = 1.0 / (2.0 * range_sigma * range_sigma);
        for (int it = 0; it < iterations; ++it) {
            Image next(cur.width, cur.height);
            for (int y = 0; y < cur.height; ++y)
                for (int x = 0; x < cur.width; ++x) {
                    const Vec3 c0 = cur.pixel(x, y);
                    Vec3 acc = Vec3::Zero();
                    double wsum = 0.0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int xx = std::clamp(x + dx, 0, cur.width - 1);
                            const int yy = std::clamp(y + dy, 0, cur.height - 1);
                            const Vec3 c = cur.pixel(xx, yy);
                            const double w = std::exp(-0.5 * (dx * dx + dy * dy) - (c - c0).squaredNorm() * inv_r);
                            acc += w * c;
                            wsum += w;
                        }
                    next.set_pixel(x, y, acc / wsum);
                }
            cur = std::move(next);
        }
        return cur;
    };
}

Prior passthrough_prior() {
    return [](const Image& in) { return in; };
}

Image nullspace_restore(const Image& y, const DegradationOp& op, const Prior& prior) {
    const Image range = op.pseudo_inverse(y);
    if (op.kind() == DegradationOp::Kind::identity) return range;
    const Image xbar = prior(range);
    if (!xbar.same_size(range)) throw DimensionMismatch("prior changed the image size");
    const Image proj = op.projector(xbar);
    Image out = range;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += xbar.data[i] - proj.data[i];
    return out;
}

} // namespace gsvton
