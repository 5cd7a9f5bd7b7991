#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "gsvton/loss.hpp"
#include "gsvton/render.hpp"

namespace gsvton {

/// A calibrated view paired with the image it should reproduce.
struct ViewTarget {
    CameraView camera;
    Image image;
};

using IndexSet = std::set<int>;

IndexSet all_indices(const GaussianCloud& cloud);

struct LearningRates {
    double position = 1.6e-4;
    double color = 2.5e-3;
    double opacity = 5e-2;
    double scale = 0.0;     // 0 freezes the group
    double rotation = 0.0;
};

enum class OptimizerKind { adam, gradient_descent };

struct OptimizerConfig {
    LearningRates lr;
    OptimizerKind kind = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-15;
    /// Gradient components at or below this magnitude are treated as round-off zeros.
    double gradient_floor = 1e-12;
    double ssim_weight = kDefaultSsimWeight;
    RenderSettings render;
};

/// Loss over `targets` (mean) and its gradient with respect to every Gaussian.
struct LossAndGradient {
    LossReport report;
    CloudGradient gradient;
};
LossAndGradient loss_and_gradient(const GaussianCloud& cloud, std::span<const ViewTarget> targets,
                                  const OptimizerConfig& config);

/**
 * First-order optimizer over a GaussianCloud.
 *
 * Only members of the editable set are read or written, including their
 * moment state, so every other Gaussian stays bit-identical across steps.
 */
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config = {}) : config_(std::move(config)) {}

    const OptimizerConfig& config() const { return config_; }

    /// One gradient step on `cloud` against `targets`, restricted to `editable`.
    LossReport step(GaussianCloud& cloud, std::span<const ViewTarget> targets, const IndexSet& editable);

private:
    struct Moments {
        std::vector<double> m, v;
        std::int64_t steps = 0;
    };

    OptimizerConfig config_;
    std::vector<Moments> state_;
};

LossReport optimize_step(GaussianCloud& cloud, std::span<const ViewTarget> targets, const IndexSet& editable,
                         Optimizer& optimizer);

struct FitReport {
    double initial_mean_loss = 0.0;
    double final_mean_loss = 0.0;
    int iterations = 0;
};

/// Mean per-view reconstruction loss of `cloud` over `targets`.
double mean_view_loss(const GaussianCloud& cloud, std::span<const ViewTarget> targets, const OptimizerConfig& config);

/// Reconstruction loop: each iteration draws one view from a seeded per-epoch
/// shuffle and takes an optimize_step over every Gaussian.
GaussianCloud fit_scene(std::span<const ViewTarget> targets, GaussianCloud init, int iterations,
                        const OptimizerConfig& config = {}, std::uint64_t seed = 0, FitReport* report = nullptr);

} // namespace gsvton
