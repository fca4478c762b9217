#pragma once

#include "panogs/core/error.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

namespace panogs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Quat = Eigen::Quaterniond;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kGoldenRatio = std::numbers::phi;

/// Camera placement: world-from-camera rotation and camera center (meters).
struct CameraPose {
    Vec3 position = Vec3::Zero();
    Quat rotation = Quat::Identity();

    /// Rotates a camera-frame direction into the world frame.
    Vec3 to_world(const Vec3& camera_dir) const { return rotation * camera_dir; }
    /// World point to camera frame.
    Vec3 to_camera(const Vec3& world_point) const { return rotation.conjugate() * (world_point - position); }

    void validate() const {
        require(std::abs(rotation.norm() - 1.0) <= 1e-9, "camera pose quaternion must be unit-norm");
        require(position.allFinite(), "camera pose position must be finite");
    }
};

inline CameraPose make_pose(const Vec3& position, const Quat& rotation) {
    CameraPose pose{position, rotation};
    pose.validate();
    return pose;
}

/// Rotation about the vertical (+y) axis; positive yaw turns +z toward +x.
inline Quat yaw_rotation(double radians) { return Quat(Eigen::AngleAxisd(radians, Vec3::UnitY())); }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Rotation matrix of the (not necessarily unit) quaternion (w, x, y, z) after normalization.
inline Mat3 rotation_from_wxyz(const Vec4& q) {
    const Vec4 n = q / q.norm();
    const double w = n[0], x = n[1], y = n[2], z = n[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// Gradient of a scalar w.r.t. the raw quaternion, given its gradient w.r.t. `rotation_from_wxyz(q)`.
inline Vec4 rotation_from_wxyz_backward(const Vec4& q, const Mat3& d_rot) {
    const double len = q.norm();
    const Vec4 n = q / len;
    const double w = n[0], x = n[1], y = n[2], z = n[3];
    const Mat3& g = d_rot;
    Vec4 dn;
    dn[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    dn[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1) -
                 2 * x * g(2, 2));
    dn[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1) -
                 2 * y * g(2, 2));
    dn[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2) + x * g(2, 0) +
                 y * g(2, 1));
    return (dn - n * n.dot(dn)) / len;
}

/// Wraps an integer column index into [0, width).
inline int wrap_index(int x, int width) {
    const int m = x % width;
    return m < 0 ? m + width : m;
}

inline int clamp_index(int v, int size) { return v < 0 ? 0 : (v >= size ? size - 1 : v); }

} // namespace panogs
