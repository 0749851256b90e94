#pragma once

// SE(3) primitives shared by the whole pipeline.
//
// Tangent-vector ordering is [translation; rotation] everywhere: a twist or
// perturbation xi stacks the 3 translational components first, then the 3
// rotational ones. All 6x6 block matrices (adjoint, left Jacobian,
// covariances) follow this ordering.

#include <Eigen/Dense>

namespace dltr {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Rigid transform: x_out = rotation * x_in + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose Identity() { return {}; }

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }

  Pose inverse() const {
    Pose out;
    out.rotation = rotation.transpose();
    out.translation = -(rotation.transpose() * translation);
    return out;
  }

  Pose operator*(const Pose& rhs) const {
    Pose out;
    out.rotation = rotation * rhs.rotation;
    out.translation = rotation * rhs.translation + translation;
    return out;
  }

  Eigen::Matrix4d matrix() const;
};

/// 3x3 skew-symmetric matrix of v (hat operator on so(3)).
Mat3 hat(const Vec3& v);

/// SO(3) exponential (Rodrigues), series fallback for small angles.
Mat3 exp_so3(const Vec3& phi);

/// SO(3) logarithm. Throws std::domain_error when the angle is within
/// 1e-6 of pi (axis is ill-conditioned there; caller decides).
Vec3 log_so3(const Mat3& R);

/// SO(3) left Jacobian and its inverse.
Mat3 left_jacobian_so3(const Vec3& phi);
Mat3 inv_left_jacobian_so3(const Vec3& phi);

/// SE(3) exponential map. xi = [rho; phi].
/// Throws std::invalid_argument on non-finite input.
Pose exp_map(const Vec6& xi);

/// SE(3) logarithm, inverse of exp_map for rotation angles < pi - 1e-6.
Vec6 log_map(const Pose& pose);

/// Adjoint of a pose: Ad(T) * xi = log(T * exp(xi^) * T^-1)^v to first
/// order. Block structure [R, t^ R; 0, R] under [translation; rotation].
Mat6 adjoint(const Pose& pose);

/// se(3) adjoint (little ad) of a tangent vector: [phi^, rho^; 0, phi^].
Mat6 ad(const Vec6& xi);

/// SE(3) left Jacobian: exp((xi + d)^) ~= exp((J_l(xi) d)^) exp(xi^).
Mat6 left_jacobian(const Vec6& xi);

/// Rotation angle of a pose in [0, pi].
double rotation_angle(const Pose& pose);

}  // namespace dltr
