#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gsvton/image.hpp"

namespace gsvton {

constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over all channels; identical images give kPsnrCap.
double psnr(const Image& a, const Image& b);
/// PSNR restricted to mask pixels (all channels).
double psnr_masked(const Image& a, const Image& b, const Mask& mask);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

/// Mean local SSIM over the valid window positions of two single-channel maps.
/// When `grad_a` is given it receives d(mean SSIM)/d a. Maps smaller than the
/// window use the largest odd window that fits (with a logged warning).
double ssim_map_mean(const ScalarMap& a, const ScalarMap& b, const SsimOptions& opt = {},
                     ScalarMap* grad_a = nullptr);

/// SSIM of the Rec.601 luma of both images.
double ssim(const Image& a, const Image& b, const SsimOptions& opt = {});

struct ViewMetric {
    int view_index = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};

/// Per-view and mean image-quality metrics for one pairing of image sets.
struct MetricReport {
    std::string dataset_id;
    std::string pairing;  // e.g. "render-vs-stage4", "stage4-vs-stage0"
    std::vector<ViewMetric> views;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    /// Slots for externally computed network metrics (FID, LPIPS, CLIP_*).
    std::map<std::string, std::optional<double>> external{
        {"FID", std::nullopt}, {"LPIPS", std::nullopt}, {"CLIP_text_image", std::nullopt},
        {"CLIP_image_image", std::nullopt}};

    void finalize();
    nlohmann::json to_json() const;
    static MetricReport from_json(const nlohmann::json& j);
    /// One header row plus one row: dataset, pairing, CLIP_text_image, CLIP_image_image, FID, SSIM, PSNR, LPIPS.
    std::string to_csv() const;
};

struct ImagePair {
    int view_index = 0;
    Image a;
    Image b;
};

MetricReport evaluate_pairs(const std::string& dataset_id, const std::string& pairing,
                            const std::vector<ImagePair>& pairs);

} // namespace gsvton
