#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

namespace gsvton {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

constexpr int kMaxShDegree = 3;
constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/**
 * One anisotropic 3D Gaussian.
 *
 * Rotation is stored (w, x, y, z) and kept at unit norm; scale holds the
 * per-axis standard deviations in world units; `sh` holds one rgb triple per
 * SH basis function, band-major, DC first.
 */
struct Gaussian {
    Vec3 position = Vec3::Zero();
    Vec4 rotation{1.0, 0.0, 0.0, 0.0};
    Vec3 scale = Vec3::Ones();
    double opacity = 1.0;
    std::vector<Vec3> sh{Vec3::Zero()};

    /// Writes a rotation, re-normalizing it. Throws on a zero or non-finite quaternion.
    void set_rotation(const Vec4& q);
    /// Throws InvalidParameter when any invariant is violated.
    void validate() const;
    bool operator==(const Gaussian&) const = default;
};

struct GaussianCloud {
    std::vector<Gaussian> gaussians;
    int sh_degree = 0;

    size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }
    void validate() const;
    bool operator==(const GaussianCloud&) const = default;
};

/// Calibrated pinhole camera. Camera space follows the OpenCV convention
/// (x right, y down, z forward); pixel centers sit at integer coordinates.
struct CameraView {
    Mat4 world_to_camera = Mat4::Identity();
    Vec2 focal{1.0, 1.0};
    Vec2 principal_point{0.0, 0.0};
    int width = 0;
    int height = 0;
    int view_index = 0;

    Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
    /// Camera center in world coordinates.
    Vec3 center() const { return -rotation().transpose() * translation(); }
    Vec3 to_camera(const Vec3& world) const { return rotation() * world + translation(); }
    void validate() const;
    bool operator==(const CameraView&) const = default;
};

/// Builds a world-to-camera transform for a camera at `eye` looking at `target`.
Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

Mat3 quaternion_to_matrix(const Vec4& q);

/// R S S^T R^T for a unit quaternion and positive per-axis scale.
Mat3 build_covariance(const Vec4& rotation, const Vec3& scale);

/// exp(-1/2 x^T Sigma^-1 x). Throws DegenerateCovariance when Sigma is not SPD
/// or its condition number exceeds 1e12.
double evaluate_gaussian(const Mat3& sigma, const Vec3& offset);

/// Real SH basis (3DGS sign convention) evaluated at a unit direction.
std::array<double, 16> sh_basis(int degree, const Vec3& dir);
/// d basis / d dir, treating the basis as a polynomial in (x, y, z).
std::array<Vec3, 16> sh_basis_gradient(int degree, const Vec3& dir);

int sh_degree_for_count(size_t count);

/// Sum_l c_l Y_l(dir) + 0.5, optionally clamped to [0,1].
Vec3 sh_to_color(const std::vector<Vec3>& coeffs, const Vec3& view_dir, bool clamp = true);

} // namespace gsvton
