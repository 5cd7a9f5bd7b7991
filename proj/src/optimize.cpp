#include "gsvton/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gsvton/errors.hpp"

namespace gsvton {

IndexSet all_indices(const GaussianCloud& cloud) {
    IndexSet s;
    for (size_t i = 0; i < cloud.size(); ++i) s.insert(static_cast<int>(i));
    return s;
}

LossAndGradient loss_and_gradient(const GaussianCloud& cloud, std::span<const ViewTarget> targets,
                                  const OptimizerConfig& config) {
    if (targets.empty()) throw PreconditionError("loss_and_gradient: no targets");
    LossAndGradient out{{}, CloudGradient(cloud)};
    out.report.lambda = config.ssim_weight;
    const double inv = 1.0 / static_cast<double>(targets.size());
    for (const auto& t : targets) {
        const RenderedImage r = render_view(cloud, t.camera, config.render);
        Image dpix;
        const LossReport lr = reconstruction_loss_with_gradient(r.pixels, t.image, config.ssim_weight, dpix);
        for (double& v : dpix.data) v *= inv;
        out.gradient += render_backward(cloud, t.camera, dpix, config.render);
        out.report.l1 += lr.l1 * inv;
        out.report.dssim += lr.dssim * inv;
        out.report.total += lr.total * inv;
    }
    return out;
}

namespace {

enum Group { kPosition, kColor, kOpacity, kScale, kRotation, kGroupCount };
constexpr const char* kGroupNames[kGroupCount] = {"position", "color", "opacity", "scale", "rotation"};

struct Layout {
    size_t offset[kGroupCount + 1];
};

Layout layout_for(size_t sh_count) {
    Layout l{};
    const size_t sizes[kGroupCount] = {3, 3 * sh_count, 1, 3, 4};
    l.offset[0] = 0;
    for (int g = 0; g < kGroupCount; ++g) l.offset[g + 1] = l.offset[g] + sizes[g];
    return l;
}

// Opacity is stepped as a logit and scale as a log; the rest are raw values.
constexpr double kOpacityEps = 1e-6;
constexpr double kMinScale = 1e-6;

double clamped_opacity(double o) { return std::clamp(o, kOpacityEps, 1.0 - kOpacityEps); }

void flatten(const Gaussian& g, std::vector<double>& out) {
    out.clear();
    for (int c = 0; c < 3; ++c) out.push_back(g.position[c]);
    for (const auto& s : g.sh)
        for (int c = 0; c < 3; ++c) out.push_back(s[c]);
    const double o = clamped_opacity(g.opacity);
    out.push_back(std::log(o / (1.0 - o)));
    for (int c = 0; c < 3; ++c) out.push_back(std::log(std::max(g.scale[c], kMinScale)));
    for (int c = 0; c < 4; ++c) out.push_back(g.rotation[c]);
}

void flatten(const GaussianGradient& d, const Gaussian& g, std::vector<double>& out) {
    out.clear();
    for (int c = 0; c < 3; ++c) out.push_back(d.position[c]);
    for (const auto& s : d.sh)
        for (int c = 0; c < 3; ++c) out.push_back(s[c]);
    const double o = clamped_opacity(g.opacity);
    out.push_back(d.opacity * o * (1.0 - o));
    for (int c = 0; c < 3; ++c) out.push_back(d.scale[c] * std::max(g.scale[c], kMinScale));
    for (int c = 0; c < 4; ++c) out.push_back(d.rotation[c]);
}

// Writes back only the groups flagged in `changed`.
void unflatten(const std::vector<double>& in, const Layout& layout, const bool* changed, Gaussian& g) {
    size_t o = layout.offset[kPosition];
    if (changed[kPosition])
        for (int c = 0; c < 3; ++c) g.position[c] = in[o + static_cast<size_t>(c)];
    o = layout.offset[kColor];
    if (changed[kColor])
        for (auto& s : g.sh)
            for (int c = 0; c < 3; ++c) s[c] = in[o++];
    if (changed[kOpacity]) g.opacity = 1.0 / (1.0 + std::exp(-in[layout.offset[kOpacity]]));
    o = layout.offset[kScale];
    if (changed[kScale])
        for (int c = 0; c < 3; ++c) g.scale[c] = std::max(std::exp(in[o + static_cast<size_t>(c)]), kMinScale);
    o = layout.offset[kRotation];
    if (changed[kRotation]) {
        Vec4 q;
        for (int c = 0; c < 4; ++c) q[c] = in[o + static_cast<size_t>(c)];
        g.set_rotation(q);
    }
}

} // namespace

LossReport Optimizer::step(GaussianCloud& cloud, std::span<const ViewTarget> targets, const IndexSet& editable) {
    for (int i : editable)
        if (i < 0 || static_cast<size_t>(i) >= cloud.size())
            throw PreconditionError("optimize_step: editable index out of range");
    if (targets.empty()) throw PreconditionError("optimize_step: no targets");

    auto [report, grad] = loss_and_gradient(cloud, targets, config_);
    if (state_.size() != cloud.size()) state_.resize(cloud.size());

    const double lr[kGroupCount] = {config_.lr.position, config_.lr.color, config_.lr.opacity, config_.lr.scale,
                                    config_.lr.rotation};
    double norms[kGroupCount] = {};
    bool skipped[kGroupCount] = {};

    std::vector<double> params, g;
    for (int idx : editable) {
        auto& gauss = cloud.gaussians[static_cast<size_t>(idx)];
        const Layout layout = layout_for(gauss.sh.size());
        flatten(gauss, params);
        flatten(grad.gaussians[static_cast<size_t>(idx)], gauss, g);
        auto& st = state_[static_cast<size_t>(idx)];
        if (st.m.size() != params.size()) {
            st.m.assign(params.size(), 0.0);
            st.v.assign(params.size(), 0.0);
            st.steps = 0;
        }
        ++st.steps;
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(st.steps));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(st.steps));
        bool changed[kGroupCount] = {};
        for (int grp = 0; grp < kGroupCount; ++grp) {
            const size_t b = layout.offset[grp], e = layout.offset[grp + 1];
            bool finite = true;
            for (size_t k = b; k < e; ++k) {
                finite = finite && std::isfinite(g[k]);
                norms[grp] += g[k] * g[k];
            }
            if (!finite) {
                skipped[grp] = true;
                continue;
            }
            if (lr[grp] == 0.0) continue;
            for (size_t k = b; k < e; ++k)
                if (std::abs(g[k]) <= config_.gradient_floor) g[k] = 0.0;
            for (size_t k = b; k < e; ++k) {
                if (config_.kind == OptimizerKind::adam) {
                    st.m[k] = config_.beta1 * st.m[k] + (1.0 - config_.beta1) * g[k];
                    st.v[k] = config_.beta2 * st.v[k] + (1.0 - config_.beta2) * g[k] * g[k];
                    const double mh = st.m[k] / bc1, vh = st.v[k] / bc2;
                    params[k] -= lr[grp] * mh / (std::sqrt(vh) + config_.epsilon);
                } else {
                    params[k] -= lr[grp] * g[k];
                }
            }
            changed[grp] = true;
        }
        unflatten(params, layout, changed, gauss);
    }
    for (int grp = 0; grp < kGroupCount; ++grp) {
        report.gradient_norms[kGroupNames[grp]] = std::sqrt(norms[grp]);
        if (skipped[grp]) report.skipped.emplace_back(kGroupNames[grp]);
    }
    return report;
}

LossReport optimize_step(GaussianCloud& cloud, std::span<const ViewTarget> targets, const IndexSet& editable,
                         Optimizer& optimizer) {
    return optimizer.step(cloud, targets, editable);
}

double mean_view_loss(const GaussianCloud& cloud, std::span<const ViewTarget> targets, const OptimizerConfig& config) {
    if (targets.empty()) throw PreconditionError("mean_view_loss: no targets");
    double sum = 0.0;
    for (const auto& t : targets)
        sum += reconstruction_loss(render_view(cloud, t.camera, config.render), t.image, config.ssim_weight).total;
    return sum / static_cast<double>(targets.size());
}

GaussianCloud fit_scene(std::span<const ViewTarget> targets, GaussianCloud init, int iterations,
                        const OptimizerConfig& config, std::uint64_t seed, FitReport* report) {
    if (targets.size() < 2) throw PreconditionError("fit_scene: at least 2 views are required");
    if (iterations < 0) throw PreconditionError("fit_scene: negative iteration count");
    FitReport fr;
    fr.iterations = iterations;
    fr.initial_mean_loss = mean_view_loss(init, targets, config);

    Optimizer opt(config);
    const IndexSet editable = all_indices(init);
    std::mt19937_64 rng(seed);
    std::vector<size_t> order(targets.size());
    size_t cursor = order.size();
    for (int it = 0; it < iterations; ++it) {
        if (cursor == order.size()) {
            std::iota(order.begin(), order.end(), size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        opt.step(init, targets.subspan(order[cursor++], 1), editable);
    }
    fr.final_mean_loss = mean_view_loss(init, targets, config);
    if (report) *report = fr;
    return init;
}

} // namespace gsvton
