#include "gsvton/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gsvton/errors.hpp"

namespace gsvton {

namespace {

void require_same(const Image& a, const Image& b, const char* what) {
    if (!a.same_size(b)) throw DimensionMismatch(fmt::format("{}: {}x{} vs {}x{}", what, a.width, a.height, b.width, b.height));
}

double psnr_from_mse(double mse) {
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<size_t>(size));
    const int half = size / 2;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - half;
        w[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[static_cast<size_t>(i)];
    }
    for (double& v : w) v /= sum;
    return w;
}

// Separable "valid" correlation with window w.
ScalarMap filter_valid(const ScalarMap& in, const std::vector<double>& w) {
    const int k = static_cast<int>(w.size());
    const int ow = in.width - k + 1, oh = in.height - k + 1;
    ScalarMap tmp(ow, in.height);
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < k; ++i) s += w[static_cast<size_t>(i)] * in(x + i, y);
            tmp(x, y) = s;
        }
    ScalarMap out(ow, oh);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int j = 0; j < k; ++j) s += w[static_cast<size_t>(j)] * tmp(x, y + j);
            out(x, y) = s;
        }
    return out;
}

// Adjoint of filter_valid: scatters a valid-size map back to full size.
ScalarMap filter_valid_adjoint(const ScalarMap& g, const std::vector<double>& w, int width, int height) {
    const int k = static_cast<int>(w.size());
    ScalarMap tmp(g.width, height);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
            for (int j = 0; j < k; ++j) tmp(x, y + j) += w[static_cast<size_t>(j)] * g(x, y);
    ScalarMap out(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < g.width; ++x)
            for (int i = 0; i < k; ++i) out(x + i, y) += w[static_cast<size_t>(i)] * tmp(x, y);
    return out;
}

ScalarMap product(const ScalarMap& a, const ScalarMap& b) {
    ScalarMap out(a.width, a.height);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

} // namespace

double psnr(const Image& a, const Image& b) {
    require_same(a, b, "psnr");
    if (a.empty()) throw InvalidParameter("psnr: empty image");
    double sum = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    return psnr_from_mse(sum / static_cast<double>(a.data.size()));
}

double psnr_masked(const Image& a, const Image& b, const Mask& mask) {
    require_same(a, b, "psnr_masked");
    if (!mask.same_size(a.width, a.height)) throw DimensionMismatch("psnr_masked: mask size mismatch");
    double sum = 0.0;
    size_t n = 0;
    for (size_t p = 0; p < a.pixel_count(); ++p) {
        if (!mask.data[p]) continue;
        for (int c = 0; c < 3; ++c) {
            const double d = a.data[p * 3 + c] - b.data[p * 3 + c];
            sum += d * d;
        }
        n += 3;
    }
    if (n == 0) throw InvalidParameter("psnr_masked: empty mask");
    return psnr_from_mse(sum / static_cast<double>(n));
}

double ssim_map_mean(const ScalarMap& a, const ScalarMap& b, const SsimOptions& opt, ScalarMap* grad_a) {
    if (!a.same_size(b.width, b.height)) throw DimensionMismatch("ssim: size mismatch");
    if (a.empty()) throw InvalidParameter("ssim: empty image");
    int k = opt.window;
    if (a.width < k || a.height < k) {
        k = std::min(a.width, a.height);
        if (k % 2 == 0) --k;
        spdlog::warn("ssim: image {}x{} smaller than {}x{} window, using {}x{}", a.width, a.height, opt.window,
                     opt.window, k, k);
    }
    const auto w = gaussian_window(k, opt.sigma);
    const double c1 = std::pow(opt.k1 * opt.dynamic_range, 2), c2 = std::pow(opt.k2 * opt.dynamic_range, 2);

    const ScalarMap mu_a = filter_valid(a, w), mu_b = filter_valid(b, w);
    const ScalarMap e_aa = filter_valid(product(a, a), w), e_bb = filter_valid(product(b, b), w);
    const ScalarMap e_ab = filter_valid(product(a, b), w);
    const size_t n = mu_a.data.size();

    ScalarMap coef_1, coef_b, coef_a;
    if (grad_a) {
        coef_1 = ScalarMap(mu_a.width, mu_a.height);
        coef_b = coef_1;
        coef_a = coef_1;
    }
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double ma = mu_a.data[i], mb = mu_b.data[i];
        const double saa = e_aa.data[i] - ma * ma, sbb = e_bb.data[i] - mb * mb, sab = e_ab.data[i] - ma * mb;
        const double a1 = 2 * ma * mb + c1, a2 = 2 * sab + c2;
        const double b1 = ma * ma + mb * mb + c1, b2 = saa + sbb + c2;
        const double s = (a1 * a2) / (b1 * b2);
        total += s;
        if (grad_a) {
            const double ds_dmu = 2 * mb * a2 / (b1 * b2) - s * 2 * ma / b1;
            const double ds_dsaa = -s / b2;
            const double ds_dsab = 2 * a1 / (b1 * b2);
            coef_1.data[i] = (ds_dmu - 2 * ma * ds_dsaa - mb * ds_dsab) / static_cast<double>(n);
            coef_b.data[i] = ds_dsab / static_cast<double>(n);
            coef_a.data[i] = 2 * ds_dsaa / static_cast<double>(n);
        }
    }
    if (grad_a) {
        const ScalarMap g1 = filter_valid_adjoint(coef_1, w, a.width, a.height);
        const ScalarMap gb = filter_valid_adjoint(coef_b, w, a.width, a.height);
        const ScalarMap ga = filter_valid_adjoint(coef_a, w, a.width, a.height);
        *grad_a = ScalarMap(a.width, a.height);
        for (size_t i = 0; i < a.data.size(); ++i)
            grad_a->data[i] = g1.data[i] + b.data[i] * gb.data[i] + a.data[i] * ga.data[i];
    }
    return total / static_cast<double>(n);
}

double ssim(const Image& a, const Image& b, const SsimOptions& opt) {
    require_same(a, b, "ssim");
    return ssim_map_mean(luma_map(a), luma_map(b), opt);
}

void MetricReport::finalize() {
    mean_psnr = mean_ssim = 0.0;
    if (views.empty()) return;
    for (const auto& v : views) {
        mean_psnr += v.psnr;
        mean_ssim += v.ssim;
    }
    mean_psnr /= static_cast<double>(views.size());
    mean_ssim /= static_cast<double>(views.size());
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json j;
    j["dataset_id"] = dataset_id;
    j["pairing"] = pairing;
    j["mean_psnr"] = mean_psnr;
    j["mean_ssim"] = mean_ssim;
    j["views"] = nlohmann::json::array();
    for (const auto& v : views) j["views"].push_back({{"view_index", v.view_index}, {"psnr", v.psnr}, {"ssim", v.ssim}});
    for (const auto& [k, v] : external) j["external"][k] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
    MetricReport r;
    r.dataset_id = j.at("dataset_id").get<std::string>();
    r.pairing = j.at("pairing").get<std::string>();
    for (const auto& v : j.at("views")) r.views.push_back({v.at("view_index"), v.at("psnr"), v.at("ssim")});
    if (j.contains("external"))
        for (const auto& [k, v] : j["external"].items())
            r.external[k] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    r.finalize();
    return r;
}

std::string MetricReport::to_csv() const {
    auto slot = [&](const char* name) {
        auto it = external.find(name);
        return (it != external.end() && it->second) ? fmt::format("{:.6f}", *it->second) : std::string();
    };
    std::ostringstream os;
    os << "dataset,pairing,CLIP_text_image,CLIP_image_image,FID,SSIM,PSNR,LPIPS\n";
    os << dataset_id << ',' << pairing << ',' << slot("CLIP_text_image") << ',' << slot("CLIP_image_image") << ','
       << slot("FID") << ',' << fmt::format("{:.6f}", mean_ssim) << ',' << fmt::format("{:.4f}", mean_psnr) << ','
       << slot("LPIPS") << '\n';
    return os.str();
}

MetricReport evaluate_pairs(const std::string& dataset_id, const std::string& pairing,
                            const std::vector<ImagePair>& pairs) {
    MetricReport r;
    r.dataset_id = dataset_id;
    r.pairing = pairing;
    for (const auto& p : pairs) r.views.push_back({p.view_index, psnr(p.a, p.b), ssim(p.a, p.b)});
    r.finalize();
    return r;
}

} // namespace gsvton
