#pragma once

// Degeneracy-aware scan-to-map localization: curvature-augmented
// association, noise-weighted point-to-plane Gauss-Newton, block-scaled
// eigen-ratio degeneracy detection, solution remapping, remapped
// covariance, Cauchy-robust fusion with the odometry prior and a
// post-alignment consistency gate.

#include <cstdint>
#include <optional>
#include <vector>

#include "dltr/cloud.hpp"
#include "dltr/lie.hpp"
#include "dltr/odometry.hpp"

namespace dltr {

struct AssociationConfig {
  int knn_k = 8;
  double beta = 1.0;         // weight of the normalized distance term
  int sample_cap = 1000;     // map points sampled for normalization scales
  double distance_gate = 1.0;   // m
  double residual_gate = 0.3;   // m, point-to-plane after coarse alignment
};

struct NormalizationScales {
  double eta_d = 1.0;      // m
  double eta_kappa = 1.0;  // 1/m^2
};

struct NoiseConfig {
  double range_std = 0.02;    // m
  double bearing_std = 0.001; // rad
  double sigma_m = 0.02;      // m, isotropic map noise
  double sigma_n = 0.01;      // normal tangent noise
};

struct DegeneracyConfig {
  double gamma = 80.0;   // eigen-ratio threshold
  double epsilon = 1e-6; // remapped-Hessian regularization
  int max_iterations = 20;
  double convergence_tol = 1e-6;  // tangent norm of the applied update
};

struct DegeneracyReport {
  double ell = 1.0;                    // block scaling factor
  Vec6 eigenvalues = Vec6::Zero();     // descending
  Mat6 eigenvectors = Mat6::Identity();  // columns match eigenvalues
  std::array<bool, 6> degenerate_mask = {};
  double lambda_thresh = 0.0;

  int num_degenerate() const {
    int n = 0;
    for (bool d : degenerate_mask) n += d ? 1 : 0;
    return n;
  }
};

struct Correspondence {
  int scan_index = -1;
  int map_index = -1;
};

struct LocalizationResult {
  Pose pose;                     // T_{m,s}
  Mat6 covariance = Mat6::Zero();  // unscaled remapped covariance
  DegeneracyReport report;
  PoseWithCovariance fused_pose;   // T_{k,v}
  PoseWithCovariance fused_T_km;   // T_{k,m}, fusion variable
  bool accepted = false;
  int surviving_pairs = 0;
};

struct FusionConfig {
  double cauchy_c = 0.1;
  int max_iterations = 20;
  double outlier_gate_t = 0.5;   // m
  double outlier_gate_r = 0.2;   // rad
  std::uint64_t seed = 1;
  bool degeneracy_handling = true;  // false = plain point-to-plane ICP
  bool curvature_association = true;
  // Fixed registration covariance assumed by the plain-ICP baseline; the
  // shaped (remapped) covariance is part of the degeneracy-aware variant.
  double plain_icp_sigma_t = 0.02;  // m
  double plain_icp_sigma_r = 0.01;  // rad
};

/// Median nearest-neighbour distance and median |kappa| over a seeded
/// pseudo-random sample of up to sample_cap map points; zero medians are
/// clamped to 1e-6.
NormalizationScales compute_normalization_scales(const Cloud& map,
                                                 const KdTree& index,
                                                 const AssociationConfig& config,
                                                 std::uint64_t seed);

/// Best map index among the k nearest by the joint spatial-curvature score
/// |k_p - k_q|/eta_k + beta |p-q|/eta_d; ties by distance then index;
/// nullopt when the nearest candidate exceeds distance_gate.
std::optional<int> associate(const Vec3& scan_point_in_map,
                             double scan_curvature, const Cloud& map,
                             const KdTree& index,
                             const NormalizationScales& scales,
                             const AssociationConfig& config);

/// Drops pairs beyond the distance gate; when use_residual_gate is set,
/// additionally drops pairs with |n^T (T p - q)| > residual_gate.
std::vector<Correspondence> filter_correspondences(
    const std::vector<Correspondence>& pairs, const Cloud& scan,
    const Cloud& map, const Pose& pose, const AssociationConfig& config,
    bool use_residual_gate);

/// Point-to-plane residual variance from range-bearing, map and normal
/// noise; floored at 1e-12.
double residual_variance(const Vec3& scan_point, const Vec3& map_point,
                         const Vec3& normal, const Pose& pose,
                         const NoiseConfig& noise);

/// Weighted Gauss-Newton normal equations over a left perturbation of the
/// pose: H xi = b with rows n^T [I, -(Tp)^] weighted by 1/sigma_r^2.
void build_normal_equations(const std::vector<Correspondence>& pairs,
                            const Cloud& scan, const Cloud& map,
                            const Pose& pose, const NoiseConfig& noise,
                            Mat6& H, Vec6& b);

/// Schur-complement block scaling: ell = sqrt(lmax(H_theta_marg) /
/// lmax(H_t_marg)), S = blkdiag(I3, ell I3). Falls back to ell = 1 when the
/// ratio is non-finite.
void compute_block_scaling(const Mat6& H, double& ell, Mat6& S);

/// Eigen-decomposition of the scaled Hessian with the ratio test
/// lmax / l_i >= gamma.
DegeneracyReport detect_degeneracy(const Mat6& H_scaled,
                                   const DegeneracyConfig& config);

/// Solves the scaled system, projects out degenerate directions, unscales
/// and left-applies the update. Returns the applied (unscaled) update.
Vec6 solve_remapped(const Mat6& H, const Vec6& b, const Mat6& S,
                    const DegeneracyReport& report, Pose& T_bar);

/// P_hat = S^-1 (V_c L_c^-1 V_c^T + V_d (1/eps) V_d^T) S, symmetrized.
Mat6 remapped_covariance(const DegeneracyReport& report, const Mat6& S,
                         double epsilon);

/// Full DA-ICP localization against a submap with prior fusion. The prior
/// is T_{k,m}; extrinsic is T_{s,k} (robot -> sensor); T_vm maps the submap
/// frame into the current vertex frame so the fused T_{k,v} can be formed.
LocalizationResult localize(const Cloud& scan, const Cloud& submap,
                            const PoseWithCovariance& prior_T_km,
                            const Pose& T_sk, const Pose& T_vm,
                            const AssociationConfig& assoc_config,
                            const NoiseConfig& noise_config,
                            const DegeneracyConfig& degen_config,
                            const FusionConfig& fusion_config);

/// Post-alignment consistency check between the fused and odometry poses.
bool reject_outlier(const Pose& fused_T_kv, const Pose& odom_T_kv,
                    double gate_t, double gate_r);

}  // namespace dltr
