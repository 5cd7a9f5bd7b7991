#include "gsvton/render.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "gsvton/errors.hpp"
#include "gsvton/parallel.hpp"

namespace gsvton {

namespace {

struct Projection {
    Vec3 cam_point;
    Mat3 world_rot;
    Eigen::Matrix<double, 2, 3> jacobian;
    Mat3 sigma;
    Vec3 view_dir;    // unit, camera center -> gaussian
    double view_dist;
    Vec3 raw_color;   // before clamp
};

Projection compute_projection(const Gaussian& g, const CameraView& cam) {
    Projection p;
    p.world_rot = cam.rotation();
    p.cam_point = p.world_rot * g.position + cam.translation();
    const double tx = p.cam_point.x(), ty = p.cam_point.y(), tz = p.cam_point.z();
    const double fx = cam.focal.x(), fy = cam.focal.y();
    p.jacobian << fx / tz, 0.0, -fx * tx / (tz * tz),
                  0.0, fy / tz, -fy * ty / (tz * tz);
    p.sigma = build_covariance(g.rotation, g.scale);
    const Vec3 v = g.position - cam.center();
    p.view_dist = v.norm();
    p.view_dir = p.view_dist > 0.0 ? Vec3(v / p.view_dist) : Vec3(0, 0, 1);
    p.raw_color = sh_to_color(g.sh, p.view_dir, false);
    return p;
}

struct TileGrid {
    int tiles_x = 0, tiles_y = 0, size = 16;
    std::vector<std::vector<int>> bins;  // splat positions (sorted order) per tile
};

TileGrid bin_splats(const std::vector<Splat2D>& splats, const CameraView& cam, int tile_size) {
    TileGrid grid;
    grid.size = std::max(1, tile_size);
    grid.tiles_x = (cam.width + grid.size - 1) / grid.size;
    grid.tiles_y = (cam.height + grid.size - 1) / grid.size;
    grid.bins.resize(static_cast<size_t>(grid.tiles_x) * grid.tiles_y);
    for (size_t s = 0; s < splats.size(); ++s) {
        const auto& sp = splats[s];
        const double r = sp.radius;
        const int x0 = std::max(0, static_cast<int>(std::floor(sp.mean2d.x() - r)));
        const int x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(sp.mean2d.x() + r)));
        const int y0 = std::max(0, static_cast<int>(std::floor(sp.mean2d.y() - r)));
        const int y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(sp.mean2d.y() + r)));
        if (x0 > x1 || y0 > y1) continue;
        for (int ty = y0 / grid.size; ty <= y1 / grid.size; ++ty)
            for (int tx = x0 / grid.size; tx <= x1 / grid.size; ++tx)
                grid.bins[static_cast<size_t>(ty) * grid.tiles_x + tx].push_back(static_cast<int>(s));
    }
    return grid;
}

struct Contribution {
    int splat;       // position in the sorted splat list
    double alpha;    // clamped
    bool clamped;
    double gauss;    // exp(power)
    Vec2 delta;      // pixel - mean
};

void gather(int px, int py, const std::vector<int>& bin, const std::vector<Splat2D>& splats,
            const RenderSettings& settings, std::vector<Contribution>& out) {
    out.clear();
    for (int s : bin) {
        const auto& sp = splats[static_cast<size_t>(s)];
        const Vec2 d(px - sp.mean2d.x(), py - sp.mean2d.y());
        const double power = -0.5 * d.dot(sp.conic * d);
        if (power > 0.0) continue;
        const double g = std::exp(power);
        const double raw = sp.alpha_base * g;
        if (raw < settings.alpha_min) continue;
        const bool clamped = raw > settings.alpha_max;
        out.push_back({s, clamped ? settings.alpha_max : raw, clamped, g, d});
    }
}

void check_camera(const CameraView& cam) {
    if (cam.width <= 0 || cam.height <= 0) throw InvalidParameter("render: camera has zero image area");
    cam.validate();
}

} // namespace

std::optional<Splat2D> project_gaussian(const Gaussian& g, const CameraView& cam, int source_index,
                                        const RenderSettings& settings) {
    const Vec3 t = cam.to_camera(g.position);
    if (!(t.z() > settings.near_plane)) return std::nullopt;
    const double limx = settings.guard_band * std::max(cam.principal_point.x(), cam.width - cam.principal_point.x()) / cam.focal.x();
    const double limy = settings.guard_band * std::max(cam.principal_point.y(), cam.height - cam.principal_point.y()) / cam.focal.y();
    if (std::abs(t.x() / t.z()) > limx || std::abs(t.y() / t.z()) > limy) return std::nullopt;
    if (g.opacity < settings.alpha_min) return std::nullopt;

    const Projection p = compute_projection(g, cam);
    const Eigen::Matrix<double, 2, 3> T = p.jacobian * p.world_rot;
    Mat2 cov = T * p.sigma * T.transpose();
    cov = 0.5 * (cov + cov.transpose());
    cov += settings.low_pass * Mat2::Identity();

    Splat2D s;
    s.mean2d = {cam.focal.x() * t.x() / t.z() + cam.principal_point.x(),
                cam.focal.y() * t.y() / t.z() + cam.principal_point.y()};
    s.cov2d = cov;
    s.conic = cov.inverse();
    s.depth = t.z();
    s.color = p.raw_color.cwiseMax(0.0).cwiseMin(1.0);
    s.alpha_base = g.opacity;
    s.source_index = source_index;
    const double lmax = Eigen::SelfAdjointEigenSolver<Mat2>(cov, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
    const double mahal2 = 2.0 * std::log(g.opacity / settings.alpha_min);
    s.radius = static_cast<int>(std::ceil(std::sqrt(std::max(0.0, mahal2) * lmax))) + 1;
    return s;
}

CompositeResult composite_pixel(std::span<const std::pair<double, Vec3>> splats, const Vec3& background,
                                double alpha_max) {
    CompositeResult r;
    for (const auto& [alpha, color] : splats) {
        const double a = std::clamp(alpha, 0.0, alpha_max);
        r.color += color * (a * r.transmittance);
        r.transmittance *= 1.0 - a;
    }
    r.color += background * r.transmittance;
    return r;
}

std::vector<Splat2D> project_cloud(const GaussianCloud& cloud, const CameraView& cam, const RenderSettings& settings) {
    std::vector<Splat2D> splats;
    splats.reserve(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i)
        if (auto s = project_gaussian(cloud.gaussians[i], cam, static_cast<int>(i), settings)) splats.push_back(*s);
    std::sort(splats.begin(), splats.end(), [](const Splat2D& a, const Splat2D& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.source_index < b.source_index;
    });
    return splats;
}

RenderedImage render_view(const GaussianCloud& cloud, const CameraView& cam, const RenderSettings& settings) {
    check_camera(cam);
    if (cloud.empty()) throw PreconditionError("render_view: empty cloud");
    const auto splats = project_cloud(cloud, cam, settings);
    const TileGrid grid = bin_splats(splats, cam, settings.tile_size);

    RenderedImage out{Image(cam.width, cam.height), ScalarMap(cam.width, cam.height, 1.0)};
    parallel_for(grid.bins.size(), [&](size_t tile) {
        const int tx = static_cast<int>(tile) % grid.tiles_x, ty = static_cast<int>(tile) / grid.tiles_x;
        std::vector<Contribution> contrib;
        for (int py = ty * grid.size; py < std::min(cam.height, (ty + 1) * grid.size); ++py)
            for (int px = tx * grid.size; px < std::min(cam.width, (tx + 1) * grid.size); ++px) {
                gather(px, py, grid.bins[tile], splats, settings, contrib);
                Vec3 c = Vec3::Zero();
                double T = 1.0;
                for (const auto& k : contrib) {
                    c += splats[static_cast<size_t>(k.splat)].color * (k.alpha * T);
                    T *= 1.0 - k.alpha;
                }
                c += settings.background * T;
                out.pixels.set_pixel(px, py, c);
                out.final_transmittance(px, py) = T;
            }
    });
    return out;
}

std::vector<ScalarMap> render_group_weights(const GaussianCloud& cloud, const CameraView& cam,
                                            std::span<const int> labels, int group_count,
                                            const RenderSettings& settings) {
    check_camera(cam);
    if (labels.size() != cloud.size()) throw DimensionMismatch("render_group_weights: one label per gaussian");
    const auto splats = project_cloud(cloud, cam, settings);
    const TileGrid grid = bin_splats(splats, cam, settings.tile_size);
    std::vector<ScalarMap> out(static_cast<size_t>(group_count), ScalarMap(cam.width, cam.height, 0.0));
    parallel_for(grid.bins.size(), [&](size_t tile) {
        const int tx = static_cast<int>(tile) % grid.tiles_x, ty = static_cast<int>(tile) / grid.tiles_x;
        std::vector<Contribution> contrib;
        for (int py = ty * grid.size; py < std::min(cam.height, (ty + 1) * grid.size); ++py)
            for (int px = tx * grid.size; px < std::min(cam.width, (tx + 1) * grid.size); ++px) {
                gather(px, py, grid.bins[tile], splats, settings, contrib);
                double T = 1.0;
                for (const auto& k : contrib) {
                    const int label = labels[static_cast<size_t>(splats[static_cast<size_t>(k.splat)].source_index)];
                    if (label >= 0 && label < group_count) out[static_cast<size_t>(label)](px, py) += k.alpha * T;
                    T *= 1.0 - k.alpha;
                }
            }
    });
    return out;
}

CloudGradient::CloudGradient(const GaussianCloud& cloud) : gaussians(cloud.size()) {
    for (size_t i = 0; i < cloud.size(); ++i) gaussians[i].sh.assign(cloud.gaussians[i].sh.size(), Vec3::Zero());
}

CloudGradient& CloudGradient::operator+=(const CloudGradient& o) {
    if (o.gaussians.size() != gaussians.size()) throw DimensionMismatch("CloudGradient size mismatch");
    for (size_t i = 0; i < gaussians.size(); ++i) {
        auto& a = gaussians[i];
        const auto& b = o.gaussians[i];
        a.position += b.position;
        a.rotation += b.rotation;
        a.scale += b.scale;
        a.opacity += b.opacity;
        for (size_t k = 0; k < a.sh.size(); ++k) a.sh[k] += b.sh[k];
    }
    return *this;
}

namespace {

// Screen-space gradient of one splat.
struct SplatGrad {
    Vec3 color = Vec3::Zero();
    double alpha_base = 0.0;
    Vec2 mean = Vec2::Zero();
    Mat2 conic = Mat2::Zero();
};

// dR/dq for a unit quaternion q = (w, x, y, z).
std::array<Mat3, 4> rotation_partials(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    std::array<Mat3, 4> d;
    d[0] << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
    d[1] << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
    d[2] << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
    d[3] << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
    return d;
}

void chain_to_gaussian(const Gaussian& g, const CameraView& cam, const Splat2D& sp, const SplatGrad& sg,
                       GaussianGradient& out) {
    const Projection p = compute_projection(g, cam);
    const double tx = p.cam_point.x(), ty = p.cam_point.y(), tz = p.cam_point.z();
    const double fx = cam.focal.x(), fy = cam.focal.y();

    out.opacity += sg.alpha_base;

    // Color through the clamp and the SH basis.
    const int degree = sh_degree_for_count(g.sh.size());
    Vec3 dcolor = sg.color;
    for (int c = 0; c < 3; ++c)
        if (p.raw_color[c] < 0.0 || p.raw_color[c] > 1.0) dcolor[c] = 0.0;
    const auto basis = sh_basis(degree, p.view_dir);
    for (size_t k = 0; k < g.sh.size(); ++k) out.sh[k] += basis[k] * dcolor;
    Vec3 ddir = Vec3::Zero();
    if (degree > 0) {
        const auto grads = sh_basis_gradient(degree, p.view_dir);
        for (size_t k = 1; k < g.sh.size(); ++k) ddir += grads[k] * g.sh[k].dot(dcolor);
    }
    Vec3 dpos = (Mat3::Identity() - p.view_dir * p.view_dir.transpose()) * ddir / p.view_dist;

    // Conic -> cov2d -> (T, Sigma).
    const Mat2 dcov = -sp.conic * sg.conic * sp.conic;
    const Mat2 dcov_sym = 0.5 * (dcov + dcov.transpose());
    const Eigen::Matrix<double, 2, 3> T = p.jacobian * p.world_rot;
    const Eigen::Matrix<double, 2, 3> dT = 2.0 * dcov_sym * T * p.sigma;
    const Mat3 dsigma = T.transpose() * dcov_sym * T;
    const Eigen::Matrix<double, 2, 3> dJ = dT * p.world_rot.transpose();

    Vec3 dt = Vec3::Zero();
    dt.x() += sg.mean.x() * fx / tz;
    dt.y() += sg.mean.y() * fy / tz;
    dt.z() += -(sg.mean.x() * fx * tx + sg.mean.y() * fy * ty) / (tz * tz);
    dt.x() += dJ(0, 2) * (-fx / (tz * tz));
    dt.y() += dJ(1, 2) * (-fy / (tz * tz));
    dt.z() += dJ(0, 0) * (-fx / (tz * tz)) + dJ(0, 2) * (2.0 * fx * tx / (tz * tz * tz)) +
              dJ(1, 1) * (-fy / (tz * tz)) + dJ(1, 2) * (2.0 * fy * ty / (tz * tz * tz));
    dpos += p.world_rot.transpose() * dt;
    out.position += dpos;

    // Sigma = M M^T with M = R S.
    const Mat3 R = quaternion_to_matrix(g.rotation);
    const Mat3 M = R * g.scale.asDiagonal();
    const Mat3 dM = 2.0 * dsigma * M;
    for (int j = 0; j < 3; ++j) out.scale[j] += dM.col(j).dot(R.col(j));
    const Mat3 dR = dM * g.scale.asDiagonal();
    const auto partials = rotation_partials(g.rotation);
    Vec4 dq;
    for (int i = 0; i < 4; ++i) dq[i] = (dR.array() * partials[static_cast<size_t>(i)].array()).sum();
    const Vec4 q = g.rotation;
    out.rotation += (dq - q * q.dot(dq)) / q.norm();
}

} // namespace

CloudGradient render_backward(const GaussianCloud& cloud, const CameraView& cam, const Image& grad_pixels,
                              const RenderSettings& settings) {
    check_camera(cam);
    if (grad_pixels.width != cam.width || grad_pixels.height != cam.height)
        throw DimensionMismatch("render_backward: gradient image size mismatch");
    const auto splats = project_cloud(cloud, cam, settings);
    const TileGrid grid = bin_splats(splats, cam, settings.tile_size);

    std::vector<std::vector<SplatGrad>> tile_grads(grid.bins.size());
    parallel_for(grid.bins.size(), [&](size_t tile) {
        const auto& bin = grid.bins[tile];
        if (bin.empty()) return;
        auto& local = tile_grads[tile];
        local.assign(bin.size(), SplatGrad{});
        // Map sorted-splat position -> slot in this tile's bin (bins are ascending).
        auto slot = [&](int s) {
            return static_cast<size_t>(std::lower_bound(bin.begin(), bin.end(), s) - bin.begin());
        };
        const int tx = static_cast<int>(tile) % grid.tiles_x, ty = static_cast<int>(tile) / grid.tiles_x;
        std::vector<Contribution> contrib;
        std::vector<double> trans;
        for (int py = ty * grid.size; py < std::min(cam.height, (ty + 1) * grid.size); ++py)
            for (int px = tx * grid.size; px < std::min(cam.width, (tx + 1) * grid.size); ++px) {
                const Vec3 dC = grad_pixels.pixel(px, py);
                if (dC.isZero(0.0)) continue;
                gather(px, py, bin, splats, settings, contrib);
                trans.resize(contrib.size());
                double T = 1.0;
                for (size_t i = 0; i < contrib.size(); ++i) {
                    trans[i] = T;
                    T *= 1.0 - contrib[i].alpha;
                }
                Vec3 suffix = settings.background * T;  // contribution of everything behind splat i
                for (size_t ii = contrib.size(); ii-- > 0;) {
                    const auto& k = contrib[ii];
                    const auto& sp = splats[static_cast<size_t>(k.splat)];
                    auto& sg = local[slot(k.splat)];
                    const double Ti = trans[ii];
                    sg.color += dC * (k.alpha * Ti);
                    const double dalpha = dC.dot(sp.color * Ti - suffix / (1.0 - k.alpha));
                    suffix += sp.color * (k.alpha * Ti);
                    if (k.clamped) continue;
                    sg.alpha_base += dalpha * k.gauss;
                    const double dpower = dalpha * sp.alpha_base * k.gauss;
                    sg.mean += dpower * (sp.conic * k.delta);
                    sg.conic += (-0.5 * dpower) * (k.delta * k.delta.transpose());
                }
            }
    });

    std::vector<SplatGrad> totals(splats.size());
    for (size_t tile = 0; tile < grid.bins.size(); ++tile)
        for (size_t j = 0; j < tile_grads[tile].size(); ++j) {
            auto& t = totals[static_cast<size_t>(grid.bins[tile][j])];
            const auto& l = tile_grads[tile][j];
            t.color += l.color;
            t.alpha_base += l.alpha_base;
            t.mean += l.mean;
            t.conic += l.conic;
        }

    CloudGradient grad(cloud);
    for (size_t s = 0; s < splats.size(); ++s) {
        const auto idx = static_cast<size_t>(splats[s].source_index);
        chain_to_gaussian(cloud.gaussians[idx], cam, splats[s], totals[s], grad.gaussians[idx]);
    }
    return grad;
}

} // namespace gsvton
