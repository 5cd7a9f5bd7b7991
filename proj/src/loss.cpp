#include "gsvton/loss.hpp"

#include <cmath>

#include "gsvton/errors.hpp"
#include "gsvton/metrics.hpp"

namespace gsvton {

namespace {

constexpr double kResidualDeadzone = 1e-9;

LossReport compute(const Image& rendered, const Image& target, double lambda, Image* grad) {
    if (!rendered.same_size(target)) throw InvalidParameter("reconstruction_loss: dimension mismatch");
    if (rendered.empty()) throw InvalidParameter("reconstruction_loss: empty image");
    if (lambda < 0.0 || lambda > 1.0) throw InvalidParameter("reconstruction_loss: lambda outside [0,1]");

    LossReport r;
    r.lambda = lambda;
    const double n = static_cast<double>(rendered.data.size());
    double sum = 0.0;
    for (size_t i = 0; i < rendered.data.size(); ++i) sum += std::abs(rendered.data[i] - target.data[i]);
    r.l1 = sum / n;

    ScalarMap dssim_dy;
    const double s = ssim_map_mean(luma_map(rendered), luma_map(target), {}, grad ? &dssim_dy : nullptr);
    r.dssim = (1.0 - s) / 2.0;
    r.total = (1.0 - lambda) * r.l1 + lambda * r.dssim;

    if (grad) {
        *grad = Image(rendered.width, rendered.height);
        constexpr double kLuma[3] = {0.299, 0.587, 0.114};
        for (size_t p = 0; p < rendered.pixel_count(); ++p)
            for (int c = 0; c < 3; ++c) {
                const size_t i = p * 3 + c;
                const double d = rendered.data[i] - target.data[i];
                // Residuals inside the deadzone give a zero subgradient so exact fits are fixed points.
                const double sign = d > kResidualDeadzone ? 1.0 : (d < -kResidualDeadzone ? -1.0 : 0.0);
                grad->data[i] = (1.0 - lambda) * sign / n - lambda * 0.5 * dssim_dy.data[p] * kLuma[c];
            }
    }
    return r;
}

} // namespace

LossReport reconstruction_loss(const RenderedImage& rendered, const Image& target, double lambda) {
    return compute(rendered.pixels, target, lambda, nullptr);
}

LossReport reconstruction_loss_with_gradient(const Image& rendered, const Image& target, double lambda, Image& grad) {
    return compute(rendered, target, lambda, &grad);
}

} // namespace gsvton
