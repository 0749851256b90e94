#include "dltr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dltr/metrics.hpp"
#include "dltr/svg_plot.hpp"

namespace dltr {

VariantSpec VariantSpec::preset(int id) {
  VariantSpec v;
  switch (id) {
    case 1:
      break;
    case 2:
      v.preprocessing = Preprocessing::kUniform;
      break;
    case 3:
      v.preprocessing = Preprocessing::kUniform;
      v.localization = Localization::kPlainIcp;
      break;
    case 4:
      v.preprocessing = Preprocessing::kUniform;
      v.localization = Localization::kPlainIcp;
      v.odometry = Odometry::kIcpBaseline;
      break;
    default:
      throw std::invalid_argument("VariantSpec::preset: id must be 1..4");
  }
  return v;
}

std::string VariantSpec::name() const {
  std::string n;
  n += preprocessing == Preprocessing::kCurvature ? "curvature" : "uniform";
  n += odometry == Odometry::kDoppler ? "+doppler" : "+icp-odom";
  n += localization == Localization::kDaIcp ? "+da-icp" : "+plain-icp";
  return n;
}

TrajectorySpec default_loop(double speed) {
  TrajectorySpec spec;
  spec.speed = speed;
  const double z = 1.2;  // sensor height above the ground plane
  spec.waypoints = {{{0.0, 0.0, z}, 0.0},
                    {{35.0, 0.0, z}, 0.0},
                    {{35.0, 15.0, z}, M_PI_2},
                    {{0.0, 15.0, z}, M_PI},
                    {{0.0, 0.0, z}, -M_PI_2}};
  return spec;
}

namespace {

constexpr double kIcpOdomDamping = 1e-3;

Pose yaw_pose(const Vec3& position, double heading) {
  Pose p;
  p.translation = position;
  p.rotation = Eigen::AngleAxisd(heading, Vec3::UnitZ()).toRotationMatrix();
  return p;
}

// Arclength-parameterized polyline with a forward-moving progress cursor so
// closed loops do not snap back to the start.
struct Polyline {
  std::vector<Vec3> pts;
  std::vector<double> s;
  int seg = 0;

  explicit Polyline(std::vector<Vec3> p) : pts(std::move(p)) {
    if (pts.size() < 2) throw std::invalid_argument("Polyline: need >= 2 points");
    s.resize(pts.size());
    s[0] = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      s[i] = s[i - 1] + (pts[i] - pts[i - 1]).norm();
    }
  }

  double total() const { return s.back(); }

  std::pair<double, double> advance(const Vec3& p) {
    const int n = static_cast<int>(pts.size()) - 1;
    double best_d2 = std::numeric_limits<double>::max();
    double best_s = s[seg];
    int best_seg = seg;
    for (int i = std::max(0, seg - 2); i < std::min(n, seg + 15); ++i) {
      const Vec3 d = pts[i + 1] - pts[i];
      const double len2 = d.squaredNorm();
      double t = len2 > 0.0 ? (p - pts[i]).dot(d) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const Vec3 proj = pts[i] + t * d;
      const double d2 = (p - proj).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best_s = s[i] + t * std::sqrt(len2);
        best_seg = i;
      }
    }
    seg = best_seg;
    return {best_s, std::sqrt(best_d2)};
  }

  Vec3 point_at(double arc) const {
    arc = std::clamp(arc, 0.0, total());
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (arc <= s[i]) {
        const double span = s[i] - s[i - 1];
        const double t = span > 0.0 ? (arc - s[i - 1]) / span : 0.0;
        return pts[i - 1] + t * (pts[i] - pts[i - 1]);
      }
    }
    return pts.back();
  }
};

// Inserts intermediate points so no segment exceeds `step`. The geometry is
// unchanged; short segments keep Polyline::advance's search window local,
// which matters on closed loops where start and goal coincide.
std::vector<Vec3> densify(const std::vector<Vec3>& pts, double step) {
  std::vector<Vec3> out;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const Vec3 d = pts[i + 1] - pts[i];
    const int n = std::max(1, static_cast<int>(std::ceil(d.norm() / step)));
    for (int j = 0; j < n; ++j)
      out.push_back(pts[i] + (static_cast<double>(j) / n) * d);
  }
  out.push_back(pts.back());
  return out;
}

// Pure pursuit: curvature toward the carrot at lookahead ahead of the
// closest-point arclength. T_pr maps robot coordinates into the path frame.
double pursuit_yaw_rate(Polyline& path, const Pose& T_pr, double speed,
                        const TrackerConfig& cfg, double* progress = nullptr,
                        double* lateral = nullptr) {
  const auto [sp, dist] = path.advance(T_pr.translation);
  if (progress) *progress = sp;
  if (lateral) *lateral = dist;
  const Vec3 target = path.point_at(sp + cfg.lookahead);
  const Vec3 q = T_pr.inverse().apply(target);
  const double l2 = std::max(q.head<2>().squaredNorm(), 1e-6);
  return std::clamp(speed * 2.0 * q.y() / l2, -cfg.max_yaw_rate,
                    cfg.max_yaw_rate);
}

Cloud preprocess_scan(const Cloud& raw, const VariantSpec& variant,
                      const PipelineConfig& cfg) {
  if (static_cast<int>(raw.size()) <= cfg.curvature.knn_k) return raw;
  if (variant.preprocessing == VariantSpec::Preprocessing::kCurvature) {
    Cloud work = raw;
    compute_normals_and_curvatures(work, cfg.curvature);
    cluster_by_curvature(work, cfg.curvature);
    return downsample_curvature_aware(work, cfg.curvature);
  }
  Cloud down = downsample_uniform(raw, cfg.uniform_voxel);
  if (static_cast<int>(down.size()) > cfg.curvature.knn_k) {
    compute_normals_and_curvatures(down, cfg.curvature);
  }
  return down;
}

std::vector<DopplerMeasurement> doppler_from_scan(const Cloud& scan,
                                                  int cap = 1500) {
  std::vector<DopplerMeasurement> out;
  const int n = static_cast<int>(scan.size());
  const int stride = std::max(1, (n + cap - 1) / cap);
  out.reserve(n / stride + 1);
  for (int i = 0; i < n; i += stride) {
    out.push_back({scan.points[i].position, scan.points[i].radial_velocity,
                   scan.points[i].timestamp});
  }
  return out;
}

struct DopplerOdomState {
  VelocityPrior prior;
  VelocityWindow window;
  bool initialized = false;
};

// One Doppler-inertial window; returns the frame-relative pose T_{k,k-1}
// with left-perturbation covariance.
PoseWithCovariance doppler_odometry_step(DopplerOdomState& st,
                                         const Cloud& raw_scan,
                                         const std::vector<GyroMeasurement>& gyro,
                                         double t_prev, double t_curr,
                                         const PipelineConfig& cfg,
                                         const Extrinsics& ext,
                                         const GyroBiasState& bias_state) {
  if (!st.initialized) {
    st.prior.mean = Vec6::Zero();
    st.prior.information = (10.0 * cfg.odometry.Qc).inverse();
    st.prior.time = t_prev;
    st.initialized = true;
  }
  st.window = solve_velocity_window(doppler_from_scan(raw_scan), gyro, st.prior,
                                    t_curr, cfg.odometry, ext,
                                    cfg.doppler_bias, bias_state);
  st.prior = marginalize_window(st.window);
  PoseWithCovariance identity;
  identity.pose = Pose::Identity();
  identity.covariance = Mat6::Zero();
  identity.time = t_prev;
  return integrate_pose_with_covariance(st.window, identity, cfg.odometry);
}

struct IcpOdomState {
  Cloud prev;
  KdTree tree;
  Pose last_rel;  // T_{s_{k-1}, s_k}
  bool has_prev = false;
};

// Scan-to-scan point-to-plane ICP baseline odometry (ablation variant 4).
PoseWithCovariance icp_odometry_step(IcpOdomState& st, const Cloud& cur,
                                     double t_curr,
                                     const PipelineConfig& cfg) {
  PoseWithCovariance out;
  out.pose = Pose::Identity();
  out.covariance = Mat6::Identity() * 1e-2;
  out.time = t_curr;
  if (!st.has_prev) {
    st.prev = cur;
    st.tree = KdTree(cur);
    st.last_rel = Pose::Identity();
    st.has_prev = true;
    return out;
  }
  Pose T = st.last_rel;  // warm start: constant velocity
  Mat6 H = Mat6::Zero();
  Vec6 b = Vec6::Zero();
  const Mat6 damping = kIcpOdomDamping * Mat6::Identity();
  for (int it = 0; it < cfg.degeneracy.max_iterations; ++it) {
    std::vector<Correspondence> pairs;
    pairs.reserve(cur.size());
    for (int i = 0; i < static_cast<int>(cur.size()); ++i) {
      const Vec3 q = T.apply(cur.points[i].position);
      const auto nn = st.tree.knn(q, 1);
      if (!nn.empty() && nn.front().second <= cfg.association.distance_gate) {
        pairs.push_back({i, nn.front().first});
      }
    }
    if (pairs.size() < 10) break;
    build_normal_equations(pairs, cur, st.prev, T, cfg.noise, H, b);
    Vec6 dx = (H + damping).ldlt().solve(b);
    if (!dx.allFinite()) break;
    if (dx.norm() > 1.0) dx *= 1.0 / dx.norm();  // trust region
    T = exp_map(dx) * T;
    if (dx.norm() < cfg.degeneracy.convergence_tol) break;
  }
  const Mat6 cov_sensor = (H + damping).inverse();
  const Pose T_rs = cfg.T_sr.inverse();
  const Pose lead = T_rs * T.inverse();
  const Mat6 Ad = adjoint(lead);
  out.pose = lead * cfg.T_sr;  // robot-frame T_{k,k-1}
  out.covariance = Ad * cov_sensor * Ad.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  st.last_rel = T;
  st.prev = cur;
  st.tree = KdTree(cur);
  return out;
}

void propagate(PoseWithCovariance& acc, const PoseWithCovariance& rel) {
  const Mat6 Ad = adjoint(rel.pose);
  acc.covariance = rel.covariance + Ad * acc.covariance * Ad.transpose();
  acc.covariance = 0.5 * (acc.covariance + acc.covariance.transpose()).eval();
  acc.pose = rel.pose * acc.pose;
  acc.time = rel.time;
}

PoseWithCovariance identity_pwc(double time) {
  PoseWithCovariance p;
  p.pose = Pose::Identity();
  p.covariance = Mat6::Zero();
  p.time = time;
  return p;
}

std::vector<Pose> teach_root_poses(const TrGraph& graph) {
  std::vector<Pose> out;  // T_{root, m} per teach vertex
  Pose T_v_root = Pose::Identity();
  for (std::size_t i = 0; i < graph.teach.size(); ++i) {
    if (i > 0) T_v_root = graph.teach[i].pose_from_prev * T_v_root;
    out.push_back(T_v_root.inverse());
  }
  return out;
}

std::uint64_t frame_seed(std::uint64_t seed, int pass, int frame) {
  return seed * 0x100000001b3ULL + static_cast<std::uint64_t>(pass) * 500009ULL +
         static_cast<std::uint64_t>(frame) * 1000003ULL;
}

}  // namespace

RunRecord run_closed_loop(const World& world, const TrajectorySpec& teach_spec,
                          const VariantSpec& variant,
                          const PipelineConfig& config, std::uint64_t seed,
                          const TrGraph* teach_graph) {
  if (teach_spec.waypoints.size() < 2) {
    throw std::invalid_argument("run_closed_loop: need >= 2 waypoints");
  }
  RunRecord record;
  const double dt = 1.0 / config.sensor.rate;
  const double speed = teach_spec.speed;
  const Extrinsics ext = Extrinsics::FromPose(config.T_sr);
  const Pose T_rs = config.T_sr.inverse();

  std::vector<Vec3> wp_positions;
  for (const auto& w : teach_spec.waypoints) wp_positions.push_back(w.position);
  Polyline teach_path(wp_positions);
  const Pose T_w_root =
      yaw_pose(teach_spec.waypoints.front().position,
               teach_spec.waypoints.front().heading);  // root frame in world

  GyroBiasState bias_state = config.gyro_bias;
  if (!config.perfect_estimation) {
    // Static calibration: one second of standstill before driving.
    const std::vector<Twist> still = {{Vec6::Zero(), -1.0}};
    bias_state.bias = calibrate_gyro_bias_static(
        generate_gyro(still, config.sensor, ext, teach_spec.gyro_bias_true,
                      -1.0, 0.0, frame_seed(seed, 0, 0)));
  }

  const int max_teach_frames =
      static_cast<int>(3.0 * teach_path.total() / (speed * dt)) + 20;

  // ---------------- teach pass ----------------
  Pose T_wr = T_w_root;
  DopplerOdomState dopp;
  IcpOdomState icp_odom;
  PoseWithCovariance offset = identity_pwc(0.0);  // T_{k, v}
  std::deque<std::pair<Cloud, Pose>> frame_buffer;
  Pose T_root_k_est = Pose::Identity();

  const bool doppler_odom =
      variant.odometry == VariantSpec::Odometry::kDoppler;

  auto make_scan = [&](const Pose& pose, const Vec6& varpi, double t,
                       std::uint64_t s) {
    return generate_scan(world, pose * T_rs, varpi, config.sensor, ext,
                         config.doppler_bias, t, s);
  };

  const bool preloaded = teach_graph && teach_graph->teach.size() >= 2;
  if (preloaded) record.graph.teach = teach_graph->teach;

  if (!preloaded) {
  if (!config.perfect_estimation) {
    // Vertex 0 from a standstill scan at t = 0.
    const Cloud scan0 =
        make_scan(T_wr, Vec6::Zero(), 0.0, frame_seed(seed, 1, 0));
    const Cloud proc0 = preprocess_scan(scan0, variant, config);
    frame_buffer.emplace_back(proc0, Pose::Identity());
    Vertex v0;
    v0.id = 0;
    v0.pose_from_prev = Pose::Identity();
    v0.edge_covariance = Mat6::Zero();
    v0.submap = accumulate_submap({{proc0, Pose::Identity()}}, config.curvature);
    record.graph.teach.push_back(std::move(v0));
    if (doppler_odom) {
      // Prime the ICP state lazily; Doppler runs stateless per window.
    } else {
      icp_odometry_step(icp_odom, proc0, 0.0, config);
    }
  } else {
    Vertex v0;
    v0.id = 0;
    record.graph.teach.push_back(std::move(v0));
  }

  double u_cmd = 0.0;
  for (int k = 1; k <= max_teach_frames; ++k) {
    const double t_prev = (k - 1) * dt;
    const double t = k * dt;
    u_cmd = std::min(speed, u_cmd + config.tracker.accel * dt);
    const double yaw =
        pursuit_yaw_rate(teach_path, T_wr, u_cmd, config.tracker);
    Vec6 xi_b = Vec6::Zero();
    xi_b(0) = u_cmd;
    xi_b(5) = yaw;
    T_wr = T_wr * exp_map(dt * xi_b);
    const Vec6 varpi = -xi_b;

    FrameLog log;
    log.time = t;
    log.gt_position = T_wr.translation;

    if (config.perfect_estimation) {
      const Pose T_root_k = T_w_root.inverse() * T_wr;
      log.est_position = T_root_k.translation;
      // Vertex bookkeeping from groundtruth offsets.
      offset.pose = exp_map(dt * varpi) * offset.pose;
      if (maybe_create_vertex(offset.pose, config.map)) {
        Vertex v;
        v.id = static_cast<int>(record.graph.teach.size());
        v.pose_from_prev = offset.pose;
        record.graph.teach.push_back(std::move(v));
        offset = identity_pwc(t);
      }
      record.teach_frames.push_back(log);
      const auto [sp, d] = teach_path.advance(T_wr.translation);
      (void)d;
      if (sp >= teach_path.total() - config.tracker.goal_tolerance) break;
      continue;
    }

    const Cloud scan = make_scan(T_wr, varpi, t, frame_seed(seed, 1, k));
    const std::vector<Twist> profile = {{varpi, t_prev}, {varpi, t}};
    const auto gyro =
        generate_gyro(profile, config.sensor, ext, teach_spec.gyro_bias_true,
                      t_prev, t, frame_seed(seed, 2, k));
    const Cloud processed = preprocess_scan(scan, variant, config);

    PoseWithCovariance rel =
        doppler_odom
            ? doppler_odometry_step(dopp, scan, gyro, t_prev, t, config, ext,
                                    bias_state)
            : icp_odometry_step(icp_odom, processed, t, config);
    rel.time = t;

    for (auto& f : frame_buffer) f.second = rel.pose * f.second;
    frame_buffer.emplace_back(processed, Pose::Identity());
    while (static_cast<int>(frame_buffer.size()) > config.map.frames_per_submap) {
      frame_buffer.pop_front();
    }
    propagate(offset, rel);
    T_root_k_est = T_root_k_est * rel.pose.inverse();
    log.est_position = T_root_k_est.translation;

    if (maybe_create_vertex(offset.pose, config.map)) {
      Vertex v;
      v.id = static_cast<int>(record.graph.teach.size());
      v.pose_from_prev = offset.pose;
      v.edge_covariance = offset.covariance;
      v.submap = accumulate_submap(
          {frame_buffer.begin(), frame_buffer.end()}, config.curvature);
      record.graph.teach.push_back(std::move(v));
      record.events.push_back(
          {t, "vertex", "teach " + std::to_string(record.graph.teach.size() - 1)});
      offset = identity_pwc(t);
    }

    record.teach_frames.push_back(log);
    const auto [sp, d] = teach_path.advance(T_wr.translation);
    (void)d;
    if (sp >= teach_path.total() - config.tracker.goal_tolerance) break;
  }
  }  // !preloaded

  if (record.graph.teach.size() < 2) {
    record.completed = false;
    record.failure_reason = "teach produced too few vertices";
    return record;
  }
  if (config.teach_only) {
    record.completed = true;
    return record;
  }

  // ---------------- repeat pass ----------------
  const std::vector<Pose> T_root_m = teach_root_poses(record.graph);
  std::vector<Vec3> track_pts;
  for (const auto& p : T_root_m) track_pts.push_back(p.translation);
  Polyline track(track_pts);

  std::vector<Vec3> teach_gt_pts;
  for (const auto& f : record.teach_frames)
    teach_gt_pts.push_back(f.gt_position);
  Polyline teach_gt(teach_gt_pts.size() >= 2 ? teach_gt_pts : wp_positions);
  // Fresh copy of the teach reference for the perfect-estimation stub; the
  // teach-pass Polyline has already been advanced to its end.
  Polyline repeat_ref(densify(wp_positions, 0.5));

  T_wr = T_w_root;
  T_wr.translation += T_w_root.rotation *
                      Vec3(0.0, config.initial_repeat_offset, 0.0);
  dopp = DopplerOdomState{};
  icp_odom = IcpOdomState{};
  offset = identity_pwc(0.0);

  Vertex r0;
  r0.id = 0;
  SpatialEdge se0;
  se0.teach_vertex = 0;
  se0.T_vm = Pose::Identity();
  Vec6 sig0;
  sig0 << 0.09, 0.09, 0.04, 0.01, 0.01, 0.02;
  se0.covariance = sig0.asDiagonal();
  r0.spatial_edge = se0;
  record.graph.repeat.push_back(std::move(r0));

  PoseWithCovariance est_T_km;  // robot w.r.t. the current target submap
  est_T_km.pose = Pose::Identity();
  est_T_km.covariance = se0.covariance;
  int target_m = 0;
  int rejection_streak = 0;
  double last_accept_time = -1.0;
  Pose last_accept_pose_s;  // sensor-frame pose for the bias update
  Vec3 gyro_sum = Vec3::Zero();
  int gyro_count = 0;

  const int max_repeat_frames =
      config.max_repeat_frames > 0
          ? config.max_repeat_frames
          : std::max(60, 3 * static_cast<int>(record.teach_frames.size()));

  FusionConfig fusion = config.fusion;
  fusion.degeneracy_handling =
      variant.localization == VariantSpec::Localization::kDaIcp;
  fusion.curvature_association = fusion.degeneracy_handling;

  auto est_root_pose = [&]() {
    return T_root_m[target_m] * est_T_km.pose.inverse();
  };

  bool failed = false;
  double u_cmd = 0.0;
  for (int k = 1; k <= max_repeat_frames && !failed; ++k) {
    const double t_prev = (k - 1) * dt;
    const double t = k * dt;
    u_cmd = std::min(speed, u_cmd + config.tracker.accel * dt);

    const Pose T_root_k = config.perfect_estimation
                              ? T_w_root.inverse() * T_wr
                              : est_root_pose();
    // The perfect-estimation stub replays the teach controller on the same
    // world-frame waypoint path, so the repeat reproduces teach exactly; with
    // estimation in the loop the vertex chain is the available reference.
    const double yaw =
        config.perfect_estimation
            ? pursuit_yaw_rate(repeat_ref, T_wr, u_cmd, config.tracker)
            : pursuit_yaw_rate(track, T_root_k, u_cmd, config.tracker);
    Vec6 xi_b = Vec6::Zero();
    xi_b(0) = u_cmd;
    xi_b(5) = yaw;
    T_wr = T_wr * exp_map(dt * xi_b);
    const Vec6 varpi = -xi_b;

    FrameLog log;
    log.time = t;
    log.gt_position = T_wr.translation;

    if (!config.perfect_estimation) {
      const Cloud scan = make_scan(T_wr, varpi, t, frame_seed(seed, 3, k));
      const std::vector<Twist> profile = {{varpi, t_prev}, {varpi, t}};
      const auto gyro = generate_gyro(
          profile, config.sensor, ext,
          teach_spec.gyro_bias_true + config.repeat_gyro_bias_drift, t_prev, t,
          frame_seed(seed, 4, k));
      for (const auto& g : gyro) {
        gyro_sum += g.value;
        ++gyro_count;
      }
      const Cloud processed = preprocess_scan(scan, variant, config);

      PoseWithCovariance rel =
          doppler_odom
              ? doppler_odometry_step(dopp, scan, gyro, t_prev, t, config, ext,
                                      bias_state)
              : icp_odometry_step(icp_odom, processed, t, config);
      rel.time = t;
      propagate(offset, rel);
      propagate(est_T_km, rel);

      // Retarget to the nearest teach vertex, then form the graph prior.
      const int current_v = static_cast<int>(record.graph.repeat.size()) - 1;
      const Vec3 p_root =
          (T_root_m[target_m] * est_T_km.pose.inverse()).translation;
      const int new_target = select_target_teach_vertex(record.graph, p_root);
      if (new_target != target_m) {
        const PoseWithCovariance leg =
            teach_chain_transform(record.graph, new_target, target_m);
        // est_T_km' = T_{k,m} * T_{m,m'}
        const Mat6 Ad = adjoint(est_T_km.pose);
        est_T_km.pose = est_T_km.pose * leg.pose;
        est_T_km.covariance += Ad * leg.covariance * Ad.transpose();
        target_m = new_target;
      }
      PoseWithCovariance prior;
      try {
        prior = compound_prior(record.graph, current_v, target_m, offset);
      } catch (const std::exception&) {
        prior = est_T_km;
      }
      prior.time = t;

      const Cloud& submap = *record.graph.teach[target_m].submap;
      const Pose T_vm_est = offset.pose.inverse() * prior.pose;
      LocalizationResult result =
          localize(processed, submap, prior, config.T_sr, T_vm_est,
                   config.association, config.noise, config.degeneracy, fusion);
      log.localized = true;
      log.accepted = result.accepted;
      log.ell = result.report.ell;
      log.eigenvalues = result.report.eigenvalues;
      log.num_degenerate = result.report.num_degenerate();

      if (result.accepted) {
        est_T_km = result.fused_T_km;
        est_T_km.time = t;
        rejection_streak = 0;
        // Refresh the current vertex's spatial edge from this localization.
        SpatialEdge se;
        se.teach_vertex = target_m;
        se.T_vm = offset.pose.inverse() * est_T_km.pose;
        const Mat6 Ad = adjoint(offset.pose.inverse());
        se.covariance = Ad * est_T_km.covariance * Ad.transpose();
        record.graph.repeat[current_v].spatial_edge = se;

        // Online gyro bias update over windows between accepted frames. The
        // anchor only advances when an update fires, so the window keeps
        // growing past min_update_interval and per-frame localization jitter
        // is not amplified by 1/dt.
        const Pose pose_s = config.T_sr * est_root_pose().inverse();
        if (last_accept_time < 0.0) {
          last_accept_pose_s = pose_s;
          last_accept_time = t;
          gyro_sum = Vec3::Zero();
          gyro_count = 0;
        } else if (t - last_accept_time > bias_state.min_update_interval &&
                   gyro_count > 0) {
          bias_state = update_gyro_bias_online(
              bias_state, pose_s, last_accept_pose_s, t - last_accept_time,
              gyro_sum / static_cast<double>(gyro_count));
          last_accept_pose_s = pose_s;
          last_accept_time = t;
          gyro_sum = Vec3::Zero();
          gyro_count = 0;
        }
      } else {
        est_T_km = prior;
        ++rejection_streak;
        record.events.push_back({t, "rejection", "frame " + std::to_string(k)});
      }

      if (maybe_create_vertex(offset.pose, config.map)) {
        Vertex v;
        v.id = static_cast<int>(record.graph.repeat.size());
        v.pose_from_prev = offset.pose;
        v.edge_covariance = offset.covariance;
        SpatialEdge se;
        se.teach_vertex = target_m;
        se.T_vm = est_T_km.pose;
        se.covariance = est_T_km.covariance;
        v.spatial_edge = se;
        record.graph.repeat.push_back(std::move(v));
        record.events.push_back(
            {t, "vertex",
             "repeat " + std::to_string(record.graph.repeat.size() - 1)});
        offset = identity_pwc(t);
      }
      log.est_position = est_root_pose().translation;
    } else {
      log.est_position = (T_w_root.inverse() * T_wr).translation;
    }

    record.repeat_frames.push_back(log);

    const auto [gs, gt_lateral] = teach_gt.advance(T_wr.translation);
    (void)gs;
    if (gt_lateral > config.failure_lateral) {
      record.failure_reason = "groundtruth lateral divergence";
      record.events.push_back({t, "failure", record.failure_reason});
      failed = true;
      break;
    }
    if (rejection_streak > config.failure_rejections) {
      record.failure_reason = "localization rejection streak";
      record.events.push_back({t, "failure", record.failure_reason});
      failed = true;
      break;
    }

    const Pose T_progress = config.perfect_estimation
                                ? T_w_root.inverse() * T_wr
                                : est_root_pose();
    const auto [sp, d] = track.advance(T_progress.translation);
    (void)d;
    if (sp >= track.total() - config.tracker.goal_tolerance) {
      record.completed = true;
      break;
    }
    if (k == max_repeat_frames) {
      record.failure_reason = "frame budget exceeded";
      record.events.push_back({t, "failure", record.failure_reason});
    }
  }
  if (failed) record.completed = false;
  return record;
}

void save_run_record(const RunRecord& record, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir + "/gt.csv");
    f.precision(17);
    f << "pass,time,x,y,z\n";
    for (const auto& fr : record.teach_frames) {
      f << "teach," << fr.time << ',' << fr.gt_position.x() << ','
        << fr.gt_position.y() << ',' << fr.gt_position.z() << '\n';
    }
    for (const auto& fr : record.repeat_frames) {
      f << "repeat," << fr.time << ',' << fr.gt_position.x() << ','
        << fr.gt_position.y() << ',' << fr.gt_position.z() << '\n';
    }
  }
  {
    std::ofstream f(dir + "/est.csv");
    f.precision(17);
    f << "pass,time,x,y,z\n";
    for (const auto& fr : record.teach_frames) {
      f << "teach," << fr.time << ',' << fr.est_position.x() << ','
        << fr.est_position.y() << ',' << fr.est_position.z() << '\n';
    }
    for (const auto& fr : record.repeat_frames) {
      f << "repeat," << fr.time << ',' << fr.est_position.x() << ','
        << fr.est_position.y() << ',' << fr.est_position.z() << '\n';
    }
  }
  {
    std::ofstream f(dir + "/degeneracy.csv");
    f.precision(17);
    f << "frame,time,ell,lam1,lam2,lam3,lam4,lam5,lam6,ndegen,accepted\n";
    for (std::size_t i = 0; i < record.repeat_frames.size(); ++i) {
      const auto& fr = record.repeat_frames[i];
      if (!fr.localized) continue;
      f << i << ',' << fr.time << ',' << fr.ell;
      for (int j = 0; j < 6; ++j) f << ',' << fr.eigenvalues(j);
      f << ',' << fr.num_degenerate << ',' << (fr.accepted ? 1 : 0) << '\n';
    }
  }
  {
    std::ofstream f(dir + "/events.csv");
    f << "time,type,detail\n";
    for (const auto& e : record.events) {
      f << e.time << ',' << e.type << ',' << e.detail << '\n';
    }
  }
  save_graph(record.graph, dir + "/graph");
}

namespace {

void write_run_plots(const RunRecord& record, const std::string& dir) {
  PlotSeries teach{"teach", {}, {}, "#1f77b4"};
  PlotSeries repeat{"repeat", {}, {}, "#d62728"};
  for (const auto& f : record.teach_frames) {
    teach.x.push_back(f.gt_position.x());
    teach.y.push_back(f.gt_position.y());
  }
  for (const auto& f : record.repeat_frames) {
    repeat.x.push_back(f.gt_position.x());
    repeat.y.push_back(f.gt_position.y());
  }
  PlotOptions path_opts;
  path_opts.title = "path overlay (groundtruth)";
  path_opts.x_label = "x [m]";
  path_opts.y_label = "y [m]";
  path_opts.equal_aspect = true;
  write_svg_plot(dir + "/paths.svg", {teach, repeat}, path_opts);

  const auto teach_path = build_path(
      [&] {
        std::vector<Vec3> p;
        for (const auto& f : record.teach_frames) p.push_back(f.gt_position);
        return p;
      }(),
      [&] {
        std::vector<double> t;
        for (const auto& f : record.teach_frames) t.push_back(f.time);
        return t;
      }());
  const auto repeat_path = build_path(
      [&] {
        std::vector<Vec3> p;
        for (const auto& f : record.repeat_frames) p.push_back(f.gt_position);
        return p;
      }(),
      [&] {
        std::vector<double> t;
        for (const auto& f : record.repeat_frames) t.push_back(f.time);
        return t;
      }());
  if (const auto errs = lateral_errors(teach_path, repeat_path)) {
    PlotSeries e{"lateral error", {}, {}, "#2ca02c"};
    for (std::size_t i = 0; i < errs->size(); ++i) {
      e.x.push_back(teach_path[i].arclength);
      e.y.push_back((*errs)[i]);
    }
    PlotOptions opts;
    opts.title = "lateral error vs arclength";
    opts.x_label = "s [m]";
    opts.y_label = "error [m]";
    write_svg_plot(dir + "/lateral_error.svg", {e}, opts);
  }

  std::vector<PlotSeries> eig(6);
  const char* colors[6] = {"#1f77b4", "#ff7f0e", "#2ca02c",
                           "#d62728", "#9467bd", "#8c564b"};
  for (int j = 0; j < 6; ++j) {
    eig[j].label = "lambda" + std::to_string(j + 1);
    eig[j].color = colors[j];
  }
  for (const auto& f : record.repeat_frames) {
    if (!f.localized) continue;
    for (int j = 0; j < 6; ++j) {
      eig[j].x.push_back(f.time);
      eig[j].y.push_back(f.eigenvalues(j));
    }
  }
  PlotOptions opts;
  opts.title = "scaled-Hessian eigenvalue spectrum";
  opts.x_label = "t [s]";
  opts.y_label = "log10 lambda";
  opts.log_y = true;
  write_svg_plot(dir + "/eigenvalues.svg", eig, opts);
}

}  // namespace

AblationResult run_ablation(const World& world, const TrajectorySpec& spec,
                            const std::vector<int>& variants, int repeats,
                            std::uint64_t seed, const PipelineConfig& config,
                            const std::string& out_dir) {
  AblationResult result;
  for (int variant_id : variants) {
    const VariantSpec variant = VariantSpec::preset(variant_id);
    std::vector<AblationRow> rows;
    for (int r = 0; r < repeats; ++r) {
      const std::uint64_t run_seed = seed + static_cast<std::uint64_t>(r);
      AblationRow row;
      row.variant = variant_id;
      row.seed = run_seed;
      try {
        const RunRecord record =
            run_closed_loop(world, spec, variant, config, run_seed);
        const MetricsReport m = compute_metrics(record);
        row.completed = record.completed;
        row.rmse_measured = m.lateral_rmse_measured;
        row.max_measured = m.max_lateral_measured;
        row.rmse_self = m.lateral_rmse_self;
        row.max_self = m.max_lateral_self;
        if (!out_dir.empty()) {
          const std::string run_dir = out_dir + "/variant" +
                                      std::to_string(variant_id) + "_run" +
                                      std::to_string(r);
          save_run_record(record, run_dir);
          write_run_plots(record, run_dir);
        }
      } catch (const std::exception&) {
        row.completed = false;
      }
      rows.push_back(row);
      result.rows.push_back(row);
    }
    AblationRow mean;
    mean.variant = variant_id;
    mean.is_mean = true;
    mean.completed = true;
    for (const auto& r : rows) {
      mean.completed = mean.completed && r.completed;
      mean.rmse_measured += r.rmse_measured;
      mean.max_measured += r.max_measured;
      mean.rmse_self += r.rmse_self;
      mean.max_self += r.max_self;
    }
    const double n = static_cast<double>(rows.size());
    mean.rmse_measured /= n;
    mean.max_measured /= n;
    mean.rmse_self /= n;
    mean.max_self /= n;
    result.means.push_back(mean);
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_ablation_csv(result, out_dir + "/ablation.csv");
  }
  return result;
}

void save_ablation_csv(const AblationResult& result, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f.precision(17);
  f << "variant,seed,kind,completed,rmse_measured,max_measured,rmse_self,"
       "max_self\n";
  for (const auto& r : result.rows) {
    f << r.variant << ',' << r.seed << ",run," << (r.completed ? 1 : 0) << ','
      << r.rmse_measured << ',' << r.max_measured << ',' << r.rmse_self << ','
      << r.max_self << '\n';
  }
  for (const auto& r : result.means) {
    f << r.variant << ",-,mean," << (r.completed ? 1 : 0) << ','
      << r.rmse_measured << ',' << r.max_measured << ',' << r.rmse_self << ','
      << r.max_self << '\n';
  }
}

}  // namespace dltr
