#include "dltr/daicp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace dltr {

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lo = *std::max_element(v.begin(), v.begin() + mid);
    m = 0.5 * (m + lo);
  }
  return m;
}

}  // namespace

NormalizationScales compute_normalization_scales(const Cloud& map,
                                                 const KdTree& index,
                                                 const AssociationConfig& config,
                                                 std::uint64_t seed) {
  const int n = static_cast<int>(map.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const int m = std::min(config.sample_cap, n);

  std::vector<double> nn_dists, curvatures;
  nn_dists.reserve(m);
  curvatures.reserve(m);
  for (int i = 0; i < m; ++i) {
    const int idx = order[i];
    const auto nbrs = index.knn(map.points[idx].position, 2);
    if (nbrs.size() >= 2) nn_dists.push_back(nbrs[1].second);
    curvatures.push_back(std::abs(map.points[idx].curvature.value_or(0.0)));
  }
  NormalizationScales scales;
  scales.eta_d = std::max(median(std::move(nn_dists)), 1e-6);
  scales.eta_kappa = std::max(median(std::move(curvatures)), 1e-6);
  return scales;
}

std::optional<int> associate(const Vec3& scan_point_in_map,
                             double scan_curvature, const Cloud& map,
                             const KdTree& index,
                             const NormalizationScales& scales,
                             const AssociationConfig& config) {
  const auto nbrs = index.knn(scan_point_in_map, config.knn_k);
  if (nbrs.empty() || nbrs.front().second > config.distance_gate) {
    return std::nullopt;
  }
  int best = -1;
  double best_score = 0.0, best_dist = 0.0;
  for (const auto& [idx, dist] : nbrs) {
    const double kq = map.points[idx].curvature.value_or(0.0);
    const double score = std::abs(scan_curvature - kq) / scales.eta_kappa +
                         config.beta * dist / scales.eta_d;
    const bool better =
        best < 0 || score < best_score ||
        (score == best_score &&
         (dist < best_dist || (dist == best_dist && idx < best)));
    if (better) {
      best = idx;
      best_score = score;
      best_dist = dist;
    }
  }
  return best;
}

std::vector<Correspondence> filter_correspondences(
    const std::vector<Correspondence>& pairs, const Cloud& scan,
    const Cloud& map, const Pose& pose, const AssociationConfig& config,
    bool use_residual_gate) {
  std::vector<Correspondence> out;
  out.reserve(pairs.size());
  for (const auto& c : pairs) {
    const Vec3 x = pose.apply(scan.points[c.scan_index].position);
    const Vec3& q = map.points[c.map_index].position;
    if ((x - q).norm() > config.distance_gate) continue;
    if (use_residual_gate) {
      const Vec3 n = map.points[c.map_index].normal.value_or(Vec3::UnitZ());
      if (std::abs(n.dot(x - q)) > config.residual_gate) continue;
    }
    out.push_back(c);
  }
  return out;
}

double residual_variance(const Vec3& scan_point, const Vec3& map_point,
                         const Vec3& normal, const Pose& pose,
                         const NoiseConfig& noise) {
  const double range = scan_point.norm();
  Mat3 sigma_p_sensor;
  if (range > 0.0) {
    const Vec3 u = scan_point / range;
    const double lateral = noise.bearing_std * range;
    sigma_p_sensor = noise.range_std * noise.range_std * (u * u.transpose()) +
                     lateral * lateral * (Mat3::Identity() - u * u.transpose());
  } else {
    sigma_p_sensor = noise.range_std * noise.range_std * Mat3::Identity();
  }
  const Mat3 sigma_p =
      pose.rotation * sigma_p_sensor * pose.rotation.transpose();
  const Vec3 diff = pose.apply(scan_point) - map_point;

  const double term_p = normal.dot(sigma_p * normal);
  const double term_q = noise.sigma_m * noise.sigma_m;  // |n| = 1
  const Mat3 sigma_n = noise.sigma_n * noise.sigma_n *
                       (Mat3::Identity() - normal * normal.transpose());
  const double term_n = diff.dot(sigma_n * diff);
  return std::max(term_p + term_q + term_n, 1e-12);
}

void build_normal_equations(const std::vector<Correspondence>& pairs,
                            const Cloud& scan, const Cloud& map,
                            const Pose& pose, const NoiseConfig& noise,
                            Mat6& H, Vec6& b) {
  H.setZero();
  b.setZero();
  for (const auto& c : pairs) {
    const Vec3& p = scan.points[c.scan_index].position;
    const Vec3& q = map.points[c.map_index].position;
    const Vec3 n = map.points[c.map_index].normal.value_or(Vec3::UnitZ());
    const Vec3 x = pose.apply(p);
    const double r = n.dot(x - q);
    Vec6 J;
    J.head<3>() = n;
    J.tail<3>() = x.cross(n);  // -n^T x^ under a left perturbation
    const double w = 1.0 / residual_variance(p, q, n, pose, noise);
    H += w * J * J.transpose();
    b -= w * J * r;
  }
  H = 0.5 * (H + H.transpose()).eval();
}

void compute_block_scaling(const Mat6& H, double& ell, Mat6& S) {
  Mat3 Htt = H.topLeftCorner<3, 3>();
  Mat3 Hrr = H.bottomRightCorner<3, 3>();
  const Mat3 Htr = H.topRightCorner<3, 3>();
  // Jitter keeps the block inversions defined on rank-deficient scenes.
  auto invert = [](Mat3 M) {
    constexpr double kJitter = 1e-12;
    Eigen::LDLT<Mat3> ldlt(M);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      M += kJitter * Mat3::Identity();
    }
    return M.ldlt().solve(Mat3::Identity()).eval();
  };
  Mat3 Ht_marg = Htt - Htr * invert(Hrr) * Htr.transpose();
  Mat3 Hr_marg = Hrr - Htr.transpose() * invert(Htt) * Htr;
  Ht_marg = 0.5 * (Ht_marg + Ht_marg.transpose()).eval();
  Hr_marg = 0.5 * (Hr_marg + Hr_marg.transpose()).eval();
  const double lmax_t =
      Eigen::SelfAdjointEigenSolver<Mat3>(Ht_marg).eigenvalues().maxCoeff();
  const double lmax_r =
      Eigen::SelfAdjointEigenSolver<Mat3>(Hr_marg).eigenvalues().maxCoeff();
  ell = std::sqrt(lmax_r / lmax_t);
  if (!std::isfinite(ell) || ell <= 0.0) ell = 1.0;  // scaling failure
  S = Mat6::Identity();
  S.bottomRightCorner<3, 3>() *= ell;
}

DegeneracyReport detect_degeneracy(const Mat6& H_scaled,
                                   const DegeneracyConfig& config) {
  Eigen::SelfAdjointEigenSolver<Mat6> es(H_scaled);
  DegeneracyReport report;
  // Reverse into descending order.
  for (int i = 0; i < 6; ++i) {
    report.eigenvalues(i) = es.eigenvalues()(5 - i);
    report.eigenvectors.col(i) = es.eigenvectors().col(5 - i);
  }
  const double lmax = report.eigenvalues(0);
  report.lambda_thresh = lmax / config.gamma;
  for (int i = 0; i < 6; ++i) {
    const double li = report.eigenvalues(i);
    report.degenerate_mask[i] = li <= 0.0 || lmax / li >= config.gamma;
  }
  return report;
}

Vec6 solve_remapped(const Mat6& H, const Vec6& b, const Mat6& S,
                    const DegeneracyReport& report, Pose& T_bar) {
  const Mat6 S_inv = S.inverse();
  const Vec6 b_scaled = S_inv.transpose() * b;
  // Project the scaled solution onto the well-conditioned eigenvectors;
  // with orthonormal V this equals V^-T V_wc^T xi for the full solve.
  Vec6 xi_scaled = Vec6::Zero();
  for (int i = 0; i < 6; ++i) {
    if (report.degenerate_mask[i]) continue;
    const Vec6 v = report.eigenvectors.col(i);
    xi_scaled += v * (v.dot(b_scaled) / report.eigenvalues(i));
  }
  const Vec6 update = S_inv * xi_scaled;
  T_bar = exp_map(update) * T_bar;
  return update;
}

Mat6 remapped_covariance(const DegeneracyReport& report, const Mat6& S,
                         double epsilon) {
  Mat6 P_scaled = Mat6::Zero();
  for (int i = 0; i < 6; ++i) {
    const Vec6 v = report.eigenvectors.col(i);
    const double var =
        report.degenerate_mask[i] ? 1.0 / epsilon : 1.0 / report.eigenvalues(i);
    P_scaled += var * v * v.transpose();
  }
  // The solve ran on the scaled system H~ = S^-T H S^-1 (x~ = S x), so the
  // unscaled covariance is S^-1 P~ S^-T; S is symmetric block-diagonal.
  const Mat6 S_inv = S.inverse();
  Mat6 P = S_inv * P_scaled * S_inv.transpose();
  return 0.5 * (P + P.transpose()).eval();
}

namespace {

// Inverse matrix square root of a symmetric PSD covariance.
Mat6 inverse_sqrt(const Mat6& P) {
  Eigen::SelfAdjointEigenSolver<Mat6> es(P);
  Vec6 d = es.eigenvalues().cwiseMax(1e-15);
  return es.eigenvectors() * d.cwiseSqrt().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

Vec6 safe_log(const Pose& pose) {
  // The fusion residuals stay far from the pi singularity in normal
  // operation; saturate rather than throw if a wild iterate lands there.
  try {
    return log_map(pose);
  } catch (const std::domain_error&) {
    Vec6 xi;
    xi.head<3>() = pose.translation;
    xi.tail<3>() = Vec3::Constant(M_PI / std::sqrt(3.0));
    return xi;
  }
}

struct FusionProblem {
  Pose prior_mean;     // T_{k,m} prior
  Mat6 prior_sqrt_info;
  Pose T_ms_hat;       // DA-ICP estimate
  Mat6 icp_sqrt_info;  // P_hat^{-1/2}
  Pose T_sk;

  Vec6 prior_error(const Pose& T_km) const {
    return prior_sqrt_info * safe_log(prior_mean * T_km.inverse());
  }
  Vec6 icp_error(const Pose& T_km) const {
    const Pose T_ms = (T_sk * T_km).inverse();
    return icp_sqrt_info * safe_log(T_ms_hat.inverse() * T_ms);
  }
};

// Central-difference Jacobian of a whitened 6-vector residual w.r.t. a left
// perturbation of T_km.
template <typename F>
Mat6 numeric_jacobian(const F& f, const Pose& T_km) {
  constexpr double h = 1e-6;
  Mat6 J;
  for (int i = 0; i < 6; ++i) {
    Vec6 d = Vec6::Zero();
    d(i) = h;
    const Vec6 plus = f(exp_map(d) * T_km);
    const Vec6 minus = f(exp_map(-d) * T_km);
    J.col(i) = (plus - minus) / (2.0 * h);
  }
  return J;
}

}  // namespace

LocalizationResult localize(const Cloud& scan, const Cloud& submap,
                            const PoseWithCovariance& prior_T_km,
                            const Pose& T_sk, const Pose& T_vm,
                            const AssociationConfig& assoc_config,
                            const NoiseConfig& noise_config,
                            const DegeneracyConfig& degen_config,
                            const FusionConfig& fusion_config) {
  LocalizationResult result;
  const Pose odom_T_kv = prior_T_km.pose * T_vm.inverse();

  auto fall_back_to_prior = [&]() {
    result.fused_T_km.pose = prior_T_km.pose;
    result.fused_T_km.covariance = prior_T_km.covariance;
    result.fused_pose.pose = odom_T_kv;
    result.fused_pose.covariance = prior_T_km.covariance;
    result.accepted = false;
  };

  if (submap.size() < 10 || scan.empty()) {
    fall_back_to_prior();
    return result;
  }

  KdTree map_index(submap);
  const NormalizationScales scales = compute_normalization_scales(
      submap, map_index, assoc_config, fusion_config.seed);

  Pose T_ms = (T_sk * prior_T_km.pose).inverse();
  Mat6 H = Mat6::Zero();
  Vec6 b = Vec6::Zero();
  Mat6 S = Mat6::Identity();
  DegeneracyReport report;
  int surviving = 0;

  for (int iter = 0; iter < degen_config.max_iterations; ++iter) {
    std::vector<Correspondence> pairs;
    pairs.reserve(scan.size());
    for (int i = 0; i < static_cast<int>(scan.size()); ++i) {
      const Vec3 p_map = T_ms.apply(scan.points[i].position);
      std::optional<int> match;
      if (fusion_config.curvature_association) {
        match = associate(p_map, scan.points[i].curvature.value_or(0.0),
                          submap, map_index, scales, assoc_config);
      } else {
        const auto nbrs = map_index.knn(p_map, 1);
        if (!nbrs.empty() && nbrs.front().second <= assoc_config.distance_gate) {
          match = nbrs.front().first;
        }
      }
      if (match) pairs.push_back({i, *match});
    }
    pairs = filter_correspondences(pairs, scan, submap, T_ms, assoc_config,
                                   /*use_residual_gate=*/iter > 0);
    surviving = static_cast<int>(pairs.size());
    if (surviving < 10) {
      result.surviving_pairs = surviving;
      fall_back_to_prior();
      return result;
    }

    build_normal_equations(pairs, scan, submap, T_ms, noise_config, H, b);

    Vec6 update;
    if (fusion_config.degeneracy_handling) {
      double ell = 1.0;
      compute_block_scaling(H, ell, S);
      const Mat6 S_inv = S.inverse();
      const Mat6 H_scaled = S_inv.transpose() * H * S_inv;
      report = detect_degeneracy(H_scaled, degen_config);
      report.ell = ell;
      update = solve_remapped(H, b, S, report, T_ms);
    } else {
      S = Mat6::Identity();
      const Mat6 H_reg = H + degen_config.epsilon * Mat6::Identity();
      update = H_reg.ldlt().solve(b);
      T_ms = exp_map(update) * T_ms;
      report = detect_degeneracy(H, degen_config);
      report.degenerate_mask.fill(false);
      report.ell = 1.0;
    }
    if (update.norm() < degen_config.convergence_tol) break;
  }

  result.pose = T_ms;
  if (fusion_config.degeneracy_handling) {
    result.covariance = remapped_covariance(report, S, degen_config.epsilon);
  } else {
    // The plain baseline assumes a fixed registration covariance; it has no
    // per-direction information shaping.
    Vec6 sig;
    sig.head<3>().setConstant(fusion_config.plain_icp_sigma_t *
                              fusion_config.plain_icp_sigma_t);
    sig.tail<3>().setConstant(fusion_config.plain_icp_sigma_r *
                              fusion_config.plain_icp_sigma_r);
    result.covariance = sig.asDiagonal();
  }
  result.report = report;
  result.surviving_pairs = surviving;

  // The plain baseline trusts the registration directly (classic
  // teach-and-repeat), subject to the odometry consistency gate below; the
  // robust prior fusion belongs to the degeneracy-aware variant.
  if (!fusion_config.degeneracy_handling) {
    result.fused_T_km.pose = T_sk.inverse() * T_ms.inverse();
    result.fused_T_km.covariance = result.covariance;
    result.fused_T_km.time = prior_T_km.time;
    result.fused_pose.pose = result.fused_T_km.pose * T_vm.inverse();
    result.fused_pose.covariance = result.covariance;
    result.fused_pose.time = prior_T_km.time;
    result.accepted = reject_outlier(result.fused_pose.pose, odom_T_kv,
                                     fusion_config.outlier_gate_t,
                                     fusion_config.outlier_gate_r);
    return result;
  }

  // Loosely coupled fusion of the DA-ICP estimate with the odometry prior
  // over T_{k,m}, Cauchy-robust on the ICP error.
  FusionProblem problem;
  problem.prior_mean = prior_T_km.pose;
  problem.prior_sqrt_info = inverse_sqrt(prior_T_km.covariance +
                                         1e-12 * Mat6::Identity());
  problem.T_ms_hat = T_ms;
  problem.icp_sqrt_info = inverse_sqrt(result.covariance +
                                       1e-12 * Mat6::Identity());
  problem.T_sk = T_sk;

  // Initialize at the DA-ICP estimate: the robust loss saturates for large
  // ICP innovations, so starting at the prior would leave the solver stuck
  // in the prior's basin whenever ICP disagrees by more than ~cauchy_c. The
  // quadratic prior factor still dominates the directions DA-ICP marked
  // degenerate (their remapped variance is 1/epsilon).
  Pose T_km = T_sk.inverse() * T_ms.inverse();
  Mat6 fused_info = Mat6::Identity();
  const double c2 = fusion_config.cauchy_c * fusion_config.cauchy_c;
  for (int iter = 0; iter < fusion_config.max_iterations; ++iter) {
    const Vec6 e_prior = problem.prior_error(T_km);
    const Vec6 e_icp = problem.icp_error(T_km);
    const double w_cauchy = 1.0 / (1.0 + e_icp.squaredNorm() / c2);
    const Mat6 Jp =
        numeric_jacobian([&](const Pose& T) { return problem.prior_error(T); },
                         T_km);
    const Mat6 Ji =
        numeric_jacobian([&](const Pose& T) { return problem.icp_error(T); },
                         T_km);
    const Mat6 A = Jp.transpose() * Jp + w_cauchy * Ji.transpose() * Ji;
    const Vec6 g = -(Jp.transpose() * e_prior + w_cauchy * Ji.transpose() * e_icp);
    const Vec6 dx = (A + 1e-12 * Mat6::Identity()).ldlt().solve(g);
    T_km = exp_map(dx) * T_km;
    fused_info = A;
    if (dx.norm() < 1e-10) break;
  }

  result.fused_T_km.pose = T_km;
  result.fused_T_km.covariance =
      (fused_info + 1e-12 * Mat6::Identity()).ldlt().solve(Mat6::Identity());
  result.fused_T_km.covariance = 0.5 * (result.fused_T_km.covariance +
                                        result.fused_T_km.covariance.transpose())
                                           .eval();
  result.fused_pose.pose = T_km * T_vm.inverse();
  result.fused_pose.covariance = result.fused_T_km.covariance;
  result.fused_pose.time = prior_T_km.time;

  result.accepted = reject_outlier(result.fused_pose.pose, odom_T_kv,
                                   fusion_config.outlier_gate_t,
                                   fusion_config.outlier_gate_r);
  return result;
}

bool reject_outlier(const Pose& fused_T_kv, const Pose& odom_T_kv,
                    double gate_t, double gate_r) {
  const Pose diff = fused_T_kv * odom_T_kv.inverse();
  const double angle = rotation_angle(diff);
  if (angle > gate_r) return false;
  Vec6 xi;
  try {
    xi = log_map(diff);
  } catch (const std::domain_error&) {
    return false;
  }
  return xi.head<3>().norm() <= gate_t && angle <= gate_r;
}

}  // namespace dltr
