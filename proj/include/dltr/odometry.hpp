#pragma once

// Correspondence-free Doppler-inertial odometry. The state per window is
// the pair of body-centric velocities (w_{k-1}, w_k); per-point Doppler and
// gyro measurements act on the linearly interpolated velocity at their own
// timestamps, so the whole window is one linear least-squares problem.
//
// Velocity convention: w is the body-centric twist such that the
// frame-to-frame pose follows T_{k,k-1} = prod_i exp(dt * w(t_i)^). For a
// robot physically moving forward, the linear part of w is negative along
// the forward axis (a point ahead closes range, i.e. negative radial
// velocity).

#include <vector>

#include "dltr/cloud.hpp"
#include "dltr/lie.hpp"

namespace dltr {

struct Twist {
  Vec6 value = Vec6::Zero();  // [linear; angular], m/s and rad/s
  double time = 0.0;
};

using Mat12 = Eigen::Matrix<double, 12, 12>;
using Vec12 = Eigen::Matrix<double, 12, 1>;

struct VelocityWindow {
  Twist twist_prev;
  Twist twist_curr;
  Mat12 joint_covariance = Mat12::Identity();
};

struct DopplerBiasModel {
  // Linear model on psi = [1, range, elevation]; default all-zero bias.
  Vec3 coefficients = Vec3::Zero();

  double bias(const Vec3& point_sensor) const {
    const double range = point_sensor.norm();
    const double elevation =
        range > 0.0 ? std::asin(point_sensor.z() / range) : 0.0;
    return coefficients(0) + coefficients(1) * range +
           coefficients(2) * elevation;
  }
};

struct Extrinsics {
  Pose T_sr;              // sensor <- robot
  Mat6 adjoint_sr = Mat6::Identity();

  static Extrinsics FromPose(const Pose& T) {
    Extrinsics e;
    e.T_sr = T;
    e.adjoint_sr = adjoint(T);
    return e;
  }
};

struct GyroBiasState {
  Vec3 bias = Vec3::Zero();          // rad/s
  double ema_weight = 0.2;           // zeta
  double min_update_interval = 1.0;  // s; longer windows dilute the pose
                                     // jitter that enters omega_hat as 1/dt
  double consistency_gate = 0.05;    // rad/s
  int skipped_updates = 0;
};

struct OdometryConfig {
  Mat6 Qc = Mat6::Identity() * 1e-2;             // WNOA PSD
  Eigen::Matrix4d Qz = Eigen::Matrix4d::Identity() * 1e-3;  // kinematic penalty
  double R_dop = 1e-2;                           // m^2/s^2
  Mat3 R_gyro = Mat3::Identity() * 1e-4;         // rad^2/s^2
  int integration_steps = 10;
  // Selects lateral velocity, vertical velocity, roll rate, pitch rate.
  Eigen::Matrix<double, 4, 6> kinematic_projection = default_projection();
  double doppler_outlier_gate_sigma = 5.0;

  static Eigen::Matrix<double, 4, 6> default_projection() {
    Eigen::Matrix<double, 4, 6> H = Eigen::Matrix<double, 4, 6>::Zero();
    H(0, 1) = 1.0;  // lateral velocity
    H(1, 2) = 1.0;  // vertical velocity
    H(2, 3) = 1.0;  // roll rate
    H(3, 4) = 1.0;  // pitch rate
    return H;
  }
};

struct PoseWithCovariance {
  Pose pose;
  Mat6 covariance = Mat6::Zero();
  double time = 0.0;
};

struct DopplerMeasurement {
  Vec3 point;      // sensor frame, m
  double value;    // measured radial velocity, m/s
  double time;     // s
};

struct GyroMeasurement {
  Vec3 value;  // rad/s, sensor frame
  double time;
};

/// Gaussian prior on the previous window velocity (marginal carried
/// between windows).
struct VelocityPrior {
  Vec6 mean = Vec6::Zero();
  Mat6 information = Mat6::Zero();
  double time = 0.0;
};

/// Doppler residual of Eq.-style measurement model:
/// y - (1/|q|)[q^T 0] Ad(T_sr) w - h(psi).
double doppler_residual(const Vec6& twist_at_ti, const Vec3& point,
                        double measured, const Extrinsics& extrinsics,
                        const DopplerBiasModel& bias_model);

/// Row of the Doppler residual Jacobian w.r.t. the twist (1x6, negated
/// measurement model direction).
Eigen::Matrix<double, 1, 6> doppler_jacobian(const Vec3& point,
                                             const Extrinsics& extrinsics);

/// Gyro residual: y - R_sr D w - b. Jacobian w.r.t. w is -R_sr D exactly.
Vec3 gyro_residual(const Vec6& twist_at_tj, const Vec3& gyro,
                   const Extrinsics& extrinsics, const GyroBiasState& bias);

Eigen::Matrix<double, 3, 6> gyro_jacobian(const Extrinsics& extrinsics);

/// Solves one odometry window [t_prev, t_curr] as linear least squares over
/// (w_{k-1}, w_k) and returns the MAP estimate with the joint covariance
/// (inverse assembled Hessian). Throws std::runtime_error when the Hessian
/// is numerically singular.
VelocityWindow solve_velocity_window(
    const std::vector<DopplerMeasurement>& doppler_meas,
    const std::vector<GyroMeasurement>& gyro_meas, const VelocityPrior& prior,
    double t_curr, const OdometryConfig& config, const Extrinsics& extrinsics,
    const DopplerBiasModel& bias_model, const GyroBiasState& bias_state);

/// Gaussian marginal of w_k, used as prior for the next window.
VelocityPrior marginalize_window(const VelocityWindow& window);

/// Linear interpolation of the twist at tau in [t_prev, t_curr].
Vec6 interpolate_velocity(const VelocityWindow& window, double tau);

/// Interpolated velocity covariance:
/// [(1-a)I aI] P [(1-a)I; aI] + (1-a)(tau - t_prev) Qc.
Mat6 interpolate_velocity_covariance(const VelocityWindow& window, double tau,
                                     const OdometryConfig& config);

/// Numerical pose integration over S steps with per-step covariance
/// propagation: Sigma <- dt^2 J_l(phi) P(w,w) J_l(phi)^T
///                       + Ad(exp(phi^)) Sigma Ad(exp(phi^))^T.
/// Returns the pose prod exp(dt w^) * prev.pose at window end.
PoseWithCovariance integrate_pose_with_covariance(
    const VelocityWindow& window, const PoseWithCovariance& prev,
    const OdometryConfig& config);

/// Arithmetic mean of a static gyro stream. Throws std::runtime_error with
/// fewer than 10 samples.
Vec3 calibrate_gyro_bias_static(const std::vector<GyroMeasurement>& stream);

/// EMA gyro-bias update from two consecutive localization poses. Candidates
/// beyond the consistency gate are skipped (counter incremented).
GyroBiasState update_gyro_bias_online(const GyroBiasState& bias,
                                      const Pose& pose_t,
                                      const Pose& pose_prev, double dt,
                                      const Vec3& gyro_mean);

}  // namespace dltr
