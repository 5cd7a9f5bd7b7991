#include "gsvton/scene.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include "gsvton/errors.hpp"

namespace gsvton {

namespace {

constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                          0.5462742152960396};
constexpr double kC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                          -0.4570457994644658, 1.445305721320277, -0.5900435899266435};

bool finite(const auto& v) { return v.allFinite(); }

} // namespace

void Gaussian::set_rotation(const Vec4& q) {
    const double n = q.norm();
    if (!std::isfinite(n) || n < 1e-12) throw InvalidParameter("rotation quaternion is zero or non-finite");
    rotation = q / n;
}

void Gaussian::validate() const {
    if (!finite(position) || !finite(rotation) || !finite(scale) || !std::isfinite(opacity))
        throw InvalidParameter("gaussian has non-finite parameters");
    if (std::abs(rotation.norm() - 1.0) > 1e-6) throw InvalidParameter("rotation is not unit norm");
    if ((scale.array() <= 0.0).any()) throw InvalidParameter("scale must be strictly positive");
    if (opacity < 0.0 || opacity > 1.0) throw InvalidParameter("opacity outside [0,1]");
    if (sh.empty() || sh_degree_for_count(sh.size()) < 0) throw InvalidParameter("bad SH coefficient count");
    for (const auto& c : sh)
        if (!finite(c)) throw InvalidParameter("non-finite SH coefficient");
}

void GaussianCloud::validate() const {
    if (sh_degree < 0 || sh_degree > kMaxShDegree) throw InvalidParameter("sh_degree must be in 0..3");
    for (const auto& g : gaussians) {
        g.validate();
        if (g.sh.size() != static_cast<size_t>(sh_coeff_count(sh_degree)))
            throw InvalidParameter("gaussian SH length does not match cloud degree");
    }
}

void CameraView::validate() const {
    if (width <= 0 || height <= 0) throw InvalidParameter("camera has zero image area");
    if (!(focal.array() > 0.0).all()) throw InvalidParameter("camera focal length must be positive");
    if (!world_to_camera.allFinite()) throw InvalidParameter("camera pose is non-finite");
    const Mat3 r = rotation();
    if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
        throw InvalidParameter("camera rotation is not orthonormal");
}

Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
    const Vec3 forward = (target - eye).normalized();
    // OpenCV convention: +y points down in the image.
    const Vec3 right = forward.cross(up).normalized();
    const Vec3 down = forward.cross(right);
    Mat3 r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = r;
    m.topRightCorner<3, 1>() = -r * eye;
    return m;
}

Mat3 quaternion_to_matrix(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 build_covariance(const Vec4& rotation, const Vec3& scale) {
    if (!finite(rotation) || !finite(scale)) throw InvalidParameter("build_covariance: non-finite input");
    if ((scale.array() <= 0.0).any()) throw InvalidParameter("build_covariance: scale must be positive");
    const double n = rotation.norm();
    if (n < 1e-12) throw InvalidParameter("build_covariance: zero quaternion");
    const Mat3 m = quaternion_to_matrix(rotation / n) * scale.asDiagonal();
    Mat3 sigma = m * m.transpose();
    // Exact symmetry regardless of summation order.
    return 0.5 * (sigma + sigma.transpose());
}

double evaluate_gaussian(const Mat3& sigma, const Vec3& offset) {
    if (!finite(sigma) || !finite(offset)) throw InvalidParameter("evaluate_gaussian: non-finite input");
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(sigma, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (lo <= 0.0 || hi / lo > 1e12) throw DegenerateCovariance("covariance is singular or ill-conditioned");
    const Eigen::LLT<Mat3> llt(sigma);
    if (llt.info() != Eigen::Success) throw DegenerateCovariance("covariance is not positive definite");
    const Vec3 half = llt.matrixL().solve(offset);
    return std::exp(-0.5 * half.squaredNorm());
}

int sh_degree_for_count(size_t count) {
    for (int d = 0; d <= kMaxShDegree; ++d)
        if (static_cast<size_t>(sh_coeff_count(d)) == count) return d;
    return -1;
}

std::array<double, 16> sh_basis(int degree, const Vec3& dir) {
    std::array<double, 16> b{};
    const double x = dir.x(), y = dir.y(), z = dir.z();
    b[0] = kC0;
    if (degree < 1) return b;
    b[1] = -kC1 * y;
    b[2] = kC1 * z;
    b[3] = -kC1 * x;
    if (degree < 2) return b;
    const double xx = x * x, yy = y * y, zz = z * z;
    b[4] = kC2[0] * x * y;
    b[5] = kC2[1] * y * z;
    b[6] = kC2[2] * (2 * zz - xx - yy);
    b[7] = kC2[3] * x * z;
    b[8] = kC2[4] * (xx - yy);
    if (degree < 3) return b;
    b[9] = kC3[0] * y * (3 * xx - yy);
    b[10] = kC3[1] * x * y * z;
    b[11] = kC3[2] * y * (4 * zz - xx - yy);
    b[12] = kC3[3] * z * (2 * zz - 3 * xx - 3 * yy);
    b[13] = kC3[4] * x * (4 * zz - xx - yy);
    b[14] = kC3[5] * z * (xx - yy);
    b[15] = kC3[6] * x * (xx - 3 * yy);
    return b;
}

std::array<Vec3, 16> sh_basis_gradient(int degree, const Vec3& dir) {
    std::array<Vec3, 16> g;
    g.fill(Vec3::Zero());
    const double x = dir.x(), y = dir.y(), z = dir.z();
    if (degree < 1) return g;
    g[1] = {0, -kC1, 0};
    g[2] = {0, 0, kC1};
    g[3] = {-kC1, 0, 0};
    if (degree < 2) return g;
    const double xx = x * x, yy = y * y, zz = z * z;
    g[4] = kC2[0] * Vec3(y, x, 0);
    g[5] = kC2[1] * Vec3(0, z, y);
    g[6] = kC2[2] * Vec3(-2 * x, -2 * y, 4 * z);
    g[7] = kC2[3] * Vec3(z, 0, x);
    g[8] = kC2[4] * Vec3(2 * x, -2 * y, 0);
    if (degree < 3) return g;
    g[9] = kC3[0] * Vec3(6 * x * y, 3 * xx - 3 * yy, 0);
    g[10] = kC3[1] * Vec3(y * z, x * z, x * y);
    g[11] = kC3[2] * Vec3(-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z);
    g[12] = kC3[3] * Vec3(-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy);
    g[13] = kC3[4] * Vec3(4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z);
    g[14] = kC3[5] * Vec3(2 * x * z, -2 * y * z, xx - yy);
    g[15] = kC3[6] * Vec3(3 * xx - 3 * yy, -6 * x * y, 0);
    return g;
}

Vec3 sh_to_color(const std::vector<Vec3>& coeffs, const Vec3& view_dir, bool clamp) {
    const int degree = sh_degree_for_count(coeffs.size());
    if (degree < 0) throw InvalidParameter("sh_to_color: coefficient count does not match a degree 0..3");
    if (!finite(view_dir)) throw InvalidParameter("sh_to_color: non-finite direction");
    const auto basis = sh_basis(degree, view_dir);
    Vec3 c = Vec3::Constant(0.5);
    for (size_t i = 0; i < coeffs.size(); ++i) c += basis[i] * coeffs[i];
    if (clamp) c = c.cwiseMax(0.0).cwiseMin(1.0);
    return c;
}

} // namespace gsvton
