#include "dltr/odometry.hpp"

#include <cmath>
#include <stdexcept>

namespace dltr {

namespace {

// 3x6 selector of the angular-rate block under [translation; rotation].
Eigen::Matrix<double, 3, 6> angular_selector() {
  Eigen::Matrix<double, 3, 6> D = Eigen::Matrix<double, 3, 6>::Zero();
  D.rightCols<3>() = Mat3::Identity();
  return D;
}

}  // namespace

double doppler_residual(const Vec6& twist_at_ti, const Vec3& point,
                        double measured, const Extrinsics& extrinsics,
                        const DopplerBiasModel& bias_model) {
  const double range = point.norm();
  Eigen::Matrix<double, 1, 6> a = Eigen::Matrix<double, 1, 6>::Zero();
  a.head<3>() = point.transpose() / range;
  return measured - (a * extrinsics.adjoint_sr * twist_at_ti)(0) -
         bias_model.bias(point);
}

Eigen::Matrix<double, 1, 6> doppler_jacobian(const Vec3& point,
                                             const Extrinsics& extrinsics) {
  const double range = point.norm();
  Eigen::Matrix<double, 1, 6> a = Eigen::Matrix<double, 1, 6>::Zero();
  a.head<3>() = point.transpose() / range;
  return -(a * extrinsics.adjoint_sr);
}

Vec3 gyro_residual(const Vec6& twist_at_tj, const Vec3& gyro,
                   const Extrinsics& extrinsics, const GyroBiasState& bias) {
  return gyro - extrinsics.T_sr.rotation * angular_selector() * twist_at_tj -
         bias.bias;
}

Eigen::Matrix<double, 3, 6> gyro_jacobian(const Extrinsics& extrinsics) {
  return -(extrinsics.T_sr.rotation * angular_selector());
}

VelocityWindow solve_velocity_window(
    const std::vector<DopplerMeasurement>& doppler_meas,
    const std::vector<GyroMeasurement>& gyro_meas, const VelocityPrior& prior,
    double t_curr, const OdometryConfig& config, const Extrinsics& extrinsics,
    const DopplerBiasModel& bias_model, const GyroBiasState& bias_state) {
  const double t_prev = prior.time;
  const double dt = t_curr - t_prev;
  if (dt <= 0.0) throw std::invalid_argument("window times not increasing");

  Mat12 A = Mat12::Zero();
  Vec12 rhs = Vec12::Zero();

  // Prior on w_{k-1}.
  A.topLeftCorner<6, 6>() += prior.information;
  rhs.head<6>() += prior.information * prior.mean;

  // WNOA factor between the two states, Q_k = dt * Qc.
  const Mat6 Qk_inv = (dt * config.Qc).ldlt().solve(Mat6::Identity());
  A.topLeftCorner<6, 6>() += Qk_inv;
  A.bottomRightCorner<6, 6>() += Qk_inv;
  A.topRightCorner<6, 6>() -= Qk_inv;
  A.bottomLeftCorner<6, 6>() -= Qk_inv;

  // Kinematic penalty on w_k.
  const Eigen::Matrix4d Qz_inv =
      config.Qz.ldlt().solve(Eigen::Matrix4d::Identity());
  const auto& H = config.kinematic_projection;
  A.bottomRightCorner<6, 6>() += H.transpose() * Qz_inv * H;

  // Doppler rows at interpolated timestamps. One hard reweighting pass:
  // residuals beyond the gate at the prior mean get weight zero.
  const double gate =
      config.doppler_outlier_gate_sigma * std::sqrt(config.R_dop);
  const double w_dop = 1.0 / config.R_dop;
  for (const auto& m : doppler_meas) {
    const double range = m.point.norm();
    if (range <= 0.0) continue;
    const double r0 =
        doppler_residual(prior.mean, m.point, m.value, extrinsics, bias_model);
    if (std::abs(r0) > gate) continue;
    Eigen::Matrix<double, 1, 6> a = Eigen::Matrix<double, 1, 6>::Zero();
    a.head<3>() = m.point.transpose() / range;
    const Eigen::Matrix<double, 1, 6> u = a * extrinsics.adjoint_sr;
    const double alpha = std::clamp((m.time - t_prev) / dt, 0.0, 1.0);
    Eigen::Matrix<double, 1, 12> row;
    row << (1.0 - alpha) * u, alpha * u;
    const double y = m.value - bias_model.bias(m.point);
    A += w_dop * row.transpose() * row;
    rhs += w_dop * row.transpose() * y;
  }

  // Gyro rows.
  const Mat3 Rg_inv = config.R_gyro.ldlt().solve(Mat3::Identity());
  const Eigen::Matrix<double, 3, 6> B =
      extrinsics.T_sr.rotation * angular_selector();
  for (const auto& g : gyro_meas) {
    const double alpha = std::clamp((g.time - t_prev) / dt, 0.0, 1.0);
    Eigen::Matrix<double, 3, 12> row;
    row << (1.0 - alpha) * B, alpha * B;
    const Vec3 y = g.value - bias_state.bias;
    A += row.transpose() * Rg_inv * row;
    rhs += row.transpose() * Rg_inv * y;
  }

  A = 0.5 * (A + A.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Mat12> es(A);
  const auto& evals = es.eigenvalues();
  if (evals(0) <= 0.0 || evals(11) / evals(0) > 1e12) {
    throw std::runtime_error("solve_velocity_window: singular window Hessian");
  }
  const Vec12 x = es.eigenvectors() *
                  evals.cwiseInverse().asDiagonal() *
                  (es.eigenvectors().transpose() * rhs);
  Mat12 P = es.eigenvectors() * evals.cwiseInverse().asDiagonal() *
            es.eigenvectors().transpose();
  P = 0.5 * (P + P.transpose()).eval();

  VelocityWindow out;
  out.twist_prev = {x.head<6>(), t_prev};
  out.twist_curr = {x.tail<6>(), t_curr};
  out.joint_covariance = P;
  return out;
}

VelocityPrior marginalize_window(const VelocityWindow& window) {
  VelocityPrior prior;
  prior.mean = window.twist_curr.value;
  prior.time = window.twist_curr.time;
  Mat6 P_curr = window.joint_covariance.bottomRightCorner<6, 6>();
  P_curr = 0.5 * (P_curr + P_curr.transpose()).eval();
  prior.information = P_curr.ldlt().solve(Mat6::Identity());
  prior.information =
      0.5 * (prior.information + prior.information.transpose()).eval();
  return prior;
}

Vec6 interpolate_velocity(const VelocityWindow& window, double tau) {
  const double t0 = window.twist_prev.time;
  const double t1 = window.twist_curr.time;
  if (tau < t0 - 1e-12 || tau > t1 + 1e-12) {
    throw std::out_of_range("interpolate_velocity: tau outside window");
  }
  const double alpha = (tau - t0) / (t1 - t0);
  return (1.0 - alpha) * window.twist_prev.value +
         alpha * window.twist_curr.value;
}

Mat6 interpolate_velocity_covariance(const VelocityWindow& window, double tau,
                                     const OdometryConfig& config) {
  const double t0 = window.twist_prev.time;
  const double t1 = window.twist_curr.time;
  if (tau < t0 - 1e-12 || tau > t1 + 1e-12) {
    throw std::out_of_range("interpolate_velocity_covariance: tau outside window");
  }
  const double alpha = (tau - t0) / (t1 - t0);
  Eigen::Matrix<double, 6, 12> L;
  L << (1.0 - alpha) * Mat6::Identity(), alpha * Mat6::Identity();
  Mat6 P = L * window.joint_covariance * L.transpose() +
           (1.0 - alpha) * (tau - t0) * config.Qc;
  return 0.5 * (P + P.transpose()).eval();
}

PoseWithCovariance integrate_pose_with_covariance(
    const VelocityWindow& window, const PoseWithCovariance& prev,
    const OdometryConfig& config) {
  const int S = std::max(config.integration_steps, 1);
  const double t0 = window.twist_prev.time;
  const double t1 = window.twist_curr.time;
  const double dt = (t1 - t0) / static_cast<double>(S);

  PoseWithCovariance out = prev;
  for (int i = 1; i <= S; ++i) {
    const double tau = t0 + i * dt;
    const Vec6 phi = dt * interpolate_velocity(window, tau);
    const Mat6 P_w = interpolate_velocity_covariance(window, tau, config);
    const Pose step = exp_map(phi);
    const Mat6 Jl = left_jacobian(phi);
    const Mat6 Ad = adjoint(step);
    out.pose = step * out.pose;
    out.covariance = dt * dt * Jl * P_w * Jl.transpose() +
                     Ad * out.covariance * Ad.transpose();
    out.covariance =
        0.5 * (out.covariance + out.covariance.transpose()).eval();
  }
  out.time = t1;
  return out;
}

Vec3 calibrate_gyro_bias_static(const std::vector<GyroMeasurement>& stream) {
  if (stream.size() < 10) {
    throw std::runtime_error("calibrate_gyro_bias_static: insufficient data");
  }
  Vec3 sum = Vec3::Zero();
  for (const auto& g : stream) sum += g.value;
  return sum / static_cast<double>(stream.size());
}

GyroBiasState update_gyro_bias_online(const GyroBiasState& bias,
                                      const Pose& pose_t,
                                      const Pose& pose_prev, double dt,
                                      const Vec3& gyro_mean) {
  GyroBiasState out = bias;
  if (dt <= bias.min_update_interval) {
    ++out.skipped_updates;
    return out;
  }
  const Vec6 rel = log_map(pose_t * pose_prev.inverse());
  const Vec3 omega_hat = rel.tail<3>() / dt;
  const Vec3 candidate = gyro_mean - omega_hat;
  if ((candidate - bias.bias).norm() > bias.consistency_gate) {
    ++out.skipped_updates;
    return out;
  }
  out.bias = (1.0 - bias.ema_weight) * bias.bias + bias.ema_weight * candidate;
  return out;
}

}  // namespace dltr
