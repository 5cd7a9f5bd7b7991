#include "gsvton/edit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <spdlog/spdlog.h>

#include "gsvton/errors.hpp"
#include "gsvton/remote.hpp"
#include "gsvton/synth.hpp"

namespace gsvton {

namespace {

constexpr std::uint64_t kPaletteSeed = 0x5eed5eedULL;
constexpr int kPaletteIterations = 25;
constexpr size_t kPaletteMaxSamples = 16384;
constexpr double kStripeLumaStep = 0.12;
constexpr int kStripeCount = 9;
constexpr double kShadeFloor = 0.75;  // luma factor at the mask edge
constexpr double kShadeGain = 0.4;    // added at the deepest interior pixel  // in stripe widths

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Two-pass chamfer distance (1, sqrt 2) from each mask pixel to the nearest
// pixel outside the mask or outside the image.
ScalarMap edge_distance(const Mask& mask) {
    const int w = mask.width, h = mask.height;
    constexpr double kDiag = 1.4142135623730951;
    ScalarMap d(w, h, 0.0);
    auto get = [&](int x, int y) { return x < 0 || y < 0 || x >= w || y >= h ? 0.0 : d(x, y); };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask(x, y))
                d(x, y) = std::min({get(x - 1, y) + 1.0, get(x, y - 1) + 1.0, get(x - 1, y - 1) + kDiag,
                                    get(x + 1, y - 1) + kDiag});
    for (int y = h - 1; y >= 0; --y)
        for (int x = w - 1; x >= 0; --x)
            if (mask(x, y))
                d(x, y) = std::min({d(x, y), get(x + 1, y) + 1.0, get(x, y + 1) + 1.0, get(x + 1, y + 1) + kDiag,
                                    get(x - 1, y + 1) + kDiag});
    return d;
}

const PaletteEntry& dominant_entry(const std::vector<PaletteEntry>& palette) {
    return *std::max_element(palette.begin(), palette.end(),
                             [](const auto& a, const auto& b) { return a.weight < b.weight; });
}

const std::vector<PaletteEntry>& decoy_palette() {
    static const std::vector<PaletteEntry> p = extract_palette(make_garment_image(decoy_garment_color(), 32, 1), 4);
    return p;
}

const PaletteEntry& nearest_entry(const std::vector<PaletteEntry>& palette, const Vec2& chroma) {
    size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < palette.size(); ++i) {
        const double d = (palette[i].ycbcr.tail<2>() - chroma).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return palette[best];
}

} // namespace

std::vector<PaletteEntry> extract_palette(const Image& img, int k) {
    if (img.empty()) throw InvalidParameter("extract_palette: empty image");
    if (k < 1) throw InvalidParameter("extract_palette: k must be positive");
    const size_t n = img.pixel_count();
    const size_t stride = std::max<size_t>(1, n / kPaletteMaxSamples);
    std::vector<Vec3> samples;
    for (size_t p = 0; p < n; p += stride) samples.push_back(rgb_to_ycbcr(img.pixel(static_cast<int>(p % img.width),
                                                                                     static_cast<int>(p / img.width))));
    const size_t kk = std::min<size_t>(static_cast<size_t>(k), samples.size());

    // k-means++ seeding.
    std::mt19937_64 rng(kPaletteSeed);
    std::vector<Vec3> centers{samples[rng() % samples.size()]};
    std::vector<double> d2(samples.size());
    while (centers.size() < kk) {
        double total = 0.0;
        for (size_t i = 0; i < samples.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centers) best = std::min(best, (samples[i] - c).squaredNorm());
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) break;
        double r = unit_uniform(rng) * total;
        size_t pick = samples.size() - 1;
        for (size_t i = 0; i < samples.size(); ++i) {
            r -= d2[i];
            if (r <= 0.0) {
                pick = i;
                break;
            }
        }
        centers.push_back(samples[pick]);
    }

    std::vector<size_t> assign(samples.size(), 0);
    for (int it = 0; it < kPaletteIterations; ++it) {
        for (size_t i = 0; i < samples.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (size_t c = 0; c < centers.size(); ++c) {
                const double d = (samples[i] - centers[c]).squaredNorm();
                if (d < best) {
                    best = d;
                    assign[i] = c;
                }
            }
        }
        std::vector<Vec3> sum(centers.size(), Vec3::Zero());
        std::vector<size_t> count(centers.size(), 0);
        for (size_t i = 0; i < samples.size(); ++i) {
            sum[assign[i]] += samples[i];
            ++count[assign[i]];
        }
        for (size_t c = 0; c < centers.size(); ++c)
            if (count[c]) centers[c] = sum[c] / static_cast<double>(count[c]);
    }
    std::vector<size_t> count(centers.size(), 0);
    for (size_t a : assign) ++count[a];
    std::vector<PaletteEntry> out;
    for (size_t c = 0; c < centers.size(); ++c)
        if (count[c]) out.push_back({centers[c], static_cast<double>(count[c]) / static_cast<double>(samples.size())});
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.ycbcr.x() < b.ycbcr.x(); });
    return out;
}

GarmentPrompt GarmentPrompt::from_image(Image garment, TargetRegion region, int k) {
    GarmentPrompt p;
    p.palette = extract_palette(garment, k);
    p.garment_image = std::move(garment);
    p.target_region = region;
    return p;
}

const PaletteEntry& GarmentPrompt::nearest(const Vec2& chroma) const {
    if (palette.empty()) throw PreconditionError("garment prompt has an empty palette");
    return nearest_entry(palette, chroma);
}

double GarmentPrompt::chroma_distance(const Vec2& chroma) const {
    return (nearest(chroma).ycbcr.tail<2>() - chroma).norm();
}

void EditorBinding::validate() const {
    if (retries < 0) throw InvalidParameter("editor retries must be >= 0");
    if (kind == EditorKind::mock) {
        if (!(jitter >= 0.0)) throw InvalidParameter("mock editor jitter must be >= 0");
        if (!endpoint.empty()) throw InvalidParameter("mock editor binding must not carry an endpoint");
    } else {
        if (endpoint.empty()) throw InvalidParameter("remote editor binding requires an endpoint");
        if (jitter != 0.0 || !sabotage.empty())
            throw InvalidParameter("remote editor binding must not carry mock-only fields");
        if (!(timeout > 0.0)) throw InvalidParameter("remote editor timeout must be positive");
    }
}

nlohmann::json EditorBinding::to_json() const {
    nlohmann::json j{{"kind", kind == EditorKind::mock ? "mock" : "remote"}, {"seed", seed}, {"retries", retries}};
    if (kind == EditorKind::mock) {
        j["jitter"] = jitter;
        j["sabotage"] = sabotage;
    } else {
        j["endpoint"] = endpoint;
        j["timeout"] = timeout;
    }
    return j;
}

EditorBinding EditorBinding::from_json(const nlohmann::json& j) {
    EditorBinding b;
    const std::string kind = j.value("kind", "mock");
    if (kind == "mock") b.kind = EditorKind::mock;
    else if (kind == "remote") b.kind = EditorKind::remote;
    else throw InvalidParameter("unknown editor kind '" + kind + "'");
    b.seed = j.value("seed", std::uint64_t{0});
    b.retries = j.value("retries", 2);
    if (b.kind == EditorKind::mock) {
        b.jitter = j.value("jitter", 0.0);
        b.sabotage = j.value("sabotage", std::vector<int>{});
    } else {
        b.endpoint = j.value("endpoint", std::string());
        b.timeout = j.value("timeout", 30.0);
    }
    return b;
}

AuxInputs synthesize_aux_inputs(const Image& image, const AuxSource& source, TargetRegion region, int view_index) {
    AuxInputs aux;
    if (source.precomputed) {
        aux = source.precomputed->for_region(region);
    } else if (source.remote_endpoint && !source.remote_endpoint->empty()) {
        const RemoteClient client(*source.remote_endpoint, source.timeout);
        LabelMap parsing;
        aux.inpaint_mask = remote_segment(client, image, region, view_index, &parsing);
        aux.parsing = parsing.empty() ? LabelMap(image.width, image.height, kLabelBackground) : parsing;
        if (parsing.empty())
            for (size_t i = 0; i < aux.inpaint_mask.data.size(); ++i)
                if (aux.inpaint_mask.data[i]) aux.parsing.data[i] = region == TargetRegion::lower ? kLabelLower : kLabelUpper;
    } else {
        throw MissingAux("view has no precomputed auxiliary inputs and no remote service is configured");
    }
    aux.validate(image.width, image.height);
    return aux;
}

double mock_hue_offset(std::uint64_t seed, int view_index, double jitter) {
    std::mt19937_64 rng(seed ^ static_cast<std::uint64_t>(view_index));
    const double u = unit_uniform(rng);
    return jitter * (u * 60.0 - 30.0) * std::numbers::pi / 180.0;
}

double gamut_scale(double y, const Vec2& chroma) {
    const Vec3 base = ycbcr_to_rgb({y, 0.0, 0.0});
    const Vec3 d = ycbcr_to_rgb({y, chroma.x(), chroma.y()}) - base;
    double s = 1.0;
    for (int k = 0; k < 3; ++k) {
        if (d[k] > 0.0) s = std::min(s, (1.0 - base[k]) / d[k]);
        else if (d[k] < 0.0) s = std::min(s, base[k] / -d[k]);
    }
    return std::max(s, 0.0);
}

Image mock_edit(const Image& image, const GarmentPrompt& prompt, const AuxInputs& aux, std::uint64_t seed,
                double jitter, const EditOptions& options) {
    aux.validate(image.width, image.height);
    Image out = image;
    const auto box = mask_bbox(aux.inpaint_mask);
    if (!box) {
        spdlog::warn("mock_edit: view {} has an empty inpaint mask, returning the input", options.view_index);
        return out;
    }
    const bool decoy = options.allow_sabotage && options.sabotage;
    const auto& palette = decoy ? decoy_palette() : prompt.palette;
    if (palette.empty()) throw PreconditionError("mock_edit: empty palette");
    const Vec3 base = dominant_entry(palette).ycbcr;
    const double theta = mock_hue_offset(seed, options.view_index, jitter);
    const Vec2 chroma(std::cos(theta) * base.y() - std::sin(theta) * base.z(),
                      std::sin(theta) * base.y() + std::cos(theta) * base.z());
    const ScalarMap dist = edge_distance(aux.inpaint_mask);
    const double dmax = *std::max_element(dist.data.begin(), dist.data.end());
    for (int y = box->y0; y < box->y1; ++y)
        for (int x = box->x0; x < box->x1; ++x) {
            if (!aux.inpaint_mask(x, y)) continue;
            const double shade = kShadeFloor + kShadeGain * std::sqrt(dist(x, y) / dmax);
            double luma_v = std::clamp(base.x() * shade, 0.0, 1.0);
            if (decoy) {
                const int stripe = (x - box->x0) * kStripeCount / box->width();
                luma_v = std::clamp(luma_v + (stripe % 2 ? -kStripeLumaStep : kStripeLumaStep), 0.0, 1.0);
            }
            const double s = gamut_scale(luma_v, chroma);
            const Vec3 rgb = ycbcr_to_rgb({luma_v, s * chroma.x(), s * chroma.y()});
            out.set_pixel(x, y, rgb.cwiseMax(0.0).cwiseMin(1.0));
        }
    return out;
}

Image edit_view(const EditorBinding& binding, const Image& image, const GarmentPrompt& prompt, const AuxInputs& aux,
                const EditOptions& options) {
    binding.validate();
    aux.validate(image.width, image.height);
    if (binding.kind == EditorKind::mock) {
        EditOptions o = options;
        o.sabotage = std::find(binding.sabotage.begin(), binding.sabotage.end(), options.view_index) !=
                     binding.sabotage.end();
        return mock_edit(image, prompt, aux, binding.seed, binding.jitter, o);
    }
    if (!mask_bbox(aux.inpaint_mask)) {
        spdlog::warn("edit_view: view {} has an empty inpaint mask, returning the input", options.view_index);
        return image;
    }
    const RemoteClient client(binding.endpoint, binding.timeout);
    const Image edited = remote_edit(client, image, prompt, aux, options.view_index, binding.seed);
    if (!edited.same_size(image)) throw EditorUnavailable("remote editor returned an image of the wrong size");
    size_t leaked = 0;
    Image clipped = confine_to_mask(image, edited, dilate(aux.inpaint_mask, kEditMargin), &leaked);
    if (leaked) spdlog::warn("edit_view: remote edit of view {} changed {} pixels outside the mask; clipped",
                             options.view_index, leaked);
    return clipped;
}

} // namespace gsvton
