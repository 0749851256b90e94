#include "dltr/lie.hpp"

#include <cmath>
#include <stdexcept>

namespace dltr {

namespace {
constexpr double kSmallAngle = 1e-8;
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d M = Eigen::Matrix4d::Identity();
  M.topLeftCorner<3, 3>() = rotation;
  M.topRightCorner<3, 1>() = translation;
  return M;
}

Mat3 hat(const Vec3& v) {
  Mat3 S;
  S << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return S;
}

Mat3 exp_so3(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 S = hat(phi);
  if (theta < kSmallAngle) {
    // 4-term Taylor in S; avoids sin(theta)/theta cancellation.
    return Mat3::Identity() + S + 0.5 * S * S + (1.0 / 6.0) * S * S * S;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * S + b * S * S;
}

Vec3 log_so3(const Mat3& R) {
  const double cos_theta = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  if (theta > M_PI - 1e-6) {
    throw std::domain_error("log_so3: rotation angle within 1e-6 of pi");
  }
  Vec3 w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (theta < kSmallAngle) {
    return 0.5 * w;
  }
  return (theta / (2.0 * std::sin(theta))) * w;
}

Mat3 left_jacobian_so3(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 S = hat(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + 0.5 * S + (1.0 / 6.0) * S * S +
           (1.0 / 24.0) * S * S * S;
  }
  const double t2 = theta * theta;
  const double a = (1.0 - std::cos(theta)) / t2;
  const double b = (theta - std::sin(theta)) / (t2 * theta);
  return Mat3::Identity() + a * S + b * S * S;
}

Mat3 inv_left_jacobian_so3(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 S = hat(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() - 0.5 * S + (1.0 / 12.0) * S * S;
  }
  const double half = 0.5 * theta;
  const double cot_half = std::cos(half) / std::sin(half);
  const double b = (1.0 - half * cot_half) / (theta * theta);
  return Mat3::Identity() - 0.5 * S + b * S * S;
}

Pose exp_map(const Vec6& xi) {
  if (!xi.allFinite()) {
    throw std::invalid_argument("exp_map: non-finite tangent vector");
  }
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  Pose out;
  out.rotation = exp_so3(phi);
  out.translation = left_jacobian_so3(phi) * rho;
  return out;
}

Vec6 log_map(const Pose& pose) {
  const Vec3 phi = log_so3(pose.rotation);
  Vec6 xi;
  xi.head<3>() = inv_left_jacobian_so3(phi) * pose.translation;
  xi.tail<3>() = phi;
  return xi;
}

Mat6 adjoint(const Pose& pose) {
  Mat6 A = Mat6::Zero();
  A.topLeftCorner<3, 3>() = pose.rotation;
  A.topRightCorner<3, 3>() = hat(pose.translation) * pose.rotation;
  A.bottomRightCorner<3, 3>() = pose.rotation;
  return A;
}

Mat6 ad(const Vec6& xi) {
  Mat6 A = Mat6::Zero();
  const Mat3 Sphi = hat(xi.tail<3>());
  A.topLeftCorner<3, 3>() = Sphi;
  A.topRightCorner<3, 3>() = hat(xi.head<3>());
  A.bottomRightCorner<3, 3>() = Sphi;
  return A;
}

namespace {

// Upper-right block of the SE(3) left Jacobian (Barfoot's Q matrix).
Mat3 jacobian_q_block(const Vec3& rho, const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 rx = hat(rho);
  const Mat3 px = hat(phi);

  double c1, c2, c3;
  if (theta < 1e-3) {
    // Taylor expansions of the trigonometric coefficients.
    const double t2 = theta * theta;
    c1 = 1.0 / 6.0 - t2 / 120.0;            // (t - sin t) / t^3
    c2 = 1.0 / 24.0 - t2 / 720.0;           // (1 - t^2/2 - cos t) / t^4
    c3 = -1.0 / 120.0 + t2 / 5040.0;        // (t - sin t - t^3/6) / t^5
  } else {
    const double t2 = theta * theta;
    const double t3 = t2 * theta;
    c1 = (theta - std::sin(theta)) / t3;
    c2 = (1.0 - 0.5 * t2 - std::cos(theta)) / (t2 * t2);
    c3 = (theta - std::sin(theta) - t3 / 6.0) / (t2 * t3);
  }

  Mat3 Q = 0.5 * rx;
  Q += c1 * (px * rx + rx * px + px * rx * px);
  Q -= c2 * (px * px * rx + rx * px * px - 3.0 * px * rx * px);
  Q -= 0.5 * (c2 - 3.0 * c3) * (px * rx * px * px + px * px * rx * px);
  return Q;
}

}  // namespace

Mat6 left_jacobian(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  if (xi.norm() < kSmallAngle) {
    const Mat6 A = ad(xi);
    return Mat6::Identity() + 0.5 * A + (1.0 / 6.0) * A * A +
           (1.0 / 24.0) * A * A * A;
  }
  const Mat3 J = left_jacobian_so3(phi);
  Mat6 out = Mat6::Zero();
  out.topLeftCorner<3, 3>() = J;
  out.topRightCorner<3, 3>() = jacobian_q_block(rho, phi);
  out.bottomRightCorner<3, 3>() = J;
  return out;
}

double rotation_angle(const Pose& pose) {
  const double c = std::clamp(0.5 * (pose.rotation.trace() - 1.0), -1.0, 1.0);
  return std::acos(c);
}

}  // namespace dltr
