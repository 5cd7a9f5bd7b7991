#pragma once

#include <map>
#include <string>

#include "gsvton/image.hpp"
#include "gsvton/render.hpp"

namespace gsvton {

constexpr double kDefaultSsimWeight = 0.2;

struct LossReport {
    double l1 = 0.0;
    double dssim = 0.0;
    double total = 0.0;
    double lambda = kDefaultSsimWeight;
    std::map<std::string, double> gradient_norms;
    /// Parameter groups whose gradient was non-finite and therefore not applied.
    std::vector<std::string> skipped;
};

/// total = (1 - lambda) * mean|rendered - target| + lambda * (1 - SSIM_luma) / 2.
LossReport reconstruction_loss(const RenderedImage& rendered, const Image& target,
                               double lambda = kDefaultSsimWeight);

/// Same loss plus dL/dpixel of the rendered image.
LossReport reconstruction_loss_with_gradient(const Image& rendered, const Image& target, double lambda,
                                             Image& grad);

} // namespace gsvton
