#pragma once

// Closed-loop teach/repeat harness over the synthetic world: simulated
// driving with estimation in the loop (a pure-pursuit tracker steers from
// the pipeline's own localization), the four ablation variants, run
// recording and the ablation runner.

#include <cstdint>
#include <string>
#include <vector>

#include "dltr/daicp.hpp"
#include "dltr/sim.hpp"
#include "dltr/tr_graph.hpp"

namespace dltr {

struct Waypoint {
  Vec3 position = Vec3::Zero();
  double heading = 0.0;  // rad, about +z
};

struct TrajectorySpec {
  std::vector<Waypoint> waypoints;
  double speed = 1.0;               // m/s
  Vec3 gyro_bias_true = Vec3::Zero();
};

struct VariantSpec {
  enum class Preprocessing { kCurvature, kUniform };
  enum class Odometry { kDoppler, kIcpBaseline };
  enum class Localization { kDaIcp, kPlainIcp };

  Preprocessing preprocessing = Preprocessing::kCurvature;
  Odometry odometry = Odometry::kDoppler;
  Localization localization = Localization::kDaIcp;

  /// Presets 1..4: (1) full pipeline; (2) uniform preprocessing; (3) also
  /// plain-ICP localization; (4) also ICP-baseline odometry. Throws
  /// std::invalid_argument otherwise.
  static VariantSpec preset(int id);
  std::string name() const;
};

struct TrackerConfig {
  double lookahead = 2.0;      // m
  double max_yaw_rate = 1.0;   // rad/s
  double accel = 1.0;          // m/s^2 speed ramp (keeps velocity jumps
                               // inside the Doppler outlier gate)
  double goal_tolerance = 1.0; // m of arclength remaining that counts as done
};

struct PipelineConfig {
  CurvatureConfig curvature;
  OdometryConfig odometry;
  AssociationConfig association;
  NoiseConfig noise;
  DegeneracyConfig degeneracy;
  FusionConfig fusion;
  MapConfig map;
  SensorSpec sensor;
  TrackerConfig tracker;
  Pose T_sr;                         // sensor <- robot extrinsic
  GyroBiasState gyro_bias;           // initial online-bias state
  DopplerBiasModel doppler_bias;
  double uniform_voxel = 0.5;        // m, variants 2-4 preprocessing
  double failure_lateral = 5.0;      // m, groundtruth divergence threshold
  int failure_rejections = 20;       // consecutive rejected localizations
  double initial_repeat_offset = 0.2;  // m, lateral start offset on repeat
  // Gyro bias drift between the teach-time static calibration and the
  // repeat session; the online bias correction has to absorb it.
  Vec3 repeat_gyro_bias_drift = Vec3::Zero();  // rad/s
  int max_repeat_frames = 0;         // 0 -> 3x the teach frame count
  bool perfect_estimation = false;   // controller-sanity stub
  bool teach_only = false;           // stop after the teach pass
};

struct FrameLog {
  double time = 0.0;
  Vec3 gt_position = Vec3::Zero();   // world frame
  Vec3 est_position = Vec3::Zero();  // teach-root frame
  double ell = 1.0;
  Vec6 eigenvalues = Vec6::Zero();   // descending, scaled Hessian
  int num_degenerate = 0;
  bool localized = false;            // a localization was attempted
  bool accepted = false;
};

struct EventLog {
  double time = 0.0;
  std::string type;    // vertex | spatial_edge | rejection | failure
  std::string detail;
};

struct RunRecord {
  bool completed = false;
  std::string failure_reason;
  TrGraph graph;
  std::vector<FrameLog> teach_frames;
  std::vector<FrameLog> repeat_frames;
  std::vector<EventLog> events;
};

/// Rectangular 35 x 15 m loop (~100 m), counter-clockwise from the origin.
TrajectorySpec default_loop(double speed);

/// Teach pass (groundtruth driving, odometry + mapping) followed by a
/// repeat pass steered from the pipeline's own estimates. The run is marked
/// Failed on groundtruth lateral divergence, a long rejection streak, or a
/// frame budget overrun.
/// When teach_graph is given its teach chain is reused and the teach pass
/// is skipped (repeat-only operation against a stored map).
RunRecord run_closed_loop(const World& world, const TrajectorySpec& teach_spec,
                          const VariantSpec& variant,
                          const PipelineConfig& config, std::uint64_t seed,
                          const TrGraph* teach_graph = nullptr);

/// gt.csv, est.csv, degeneracy.csv, events.csv plus the graph directory.
void save_run_record(const RunRecord& record, const std::string& dir);

struct AblationRow {
  int variant = 0;
  std::uint64_t seed = 0;     // ignored on mean rows
  bool is_mean = false;
  bool completed = false;
  double rmse_measured = 0.0;
  double max_measured = 0.0;
  double rmse_self = 0.0;
  double max_self = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;   // per (variant, repeat)
  std::vector<AblationRow> means;  // per variant, arithmetic mean of rows
};

/// Runs each variant for `repeats` seeds (seed, seed+1, ...), writes
/// ablation.csv plus per-run record directories and SVG plots under
/// out_dir (skipped when out_dir is empty). Any run throwing is recorded
/// as Failed and the harness continues.
AblationResult run_ablation(const World& world, const TrajectorySpec& spec,
                            const std::vector<int>& variants, int repeats,
                            std::uint64_t seed, const PipelineConfig& config,
                            const std::string& out_dir);

void save_ablation_csv(const AblationResult& result, const std::string& path);

}  // namespace dltr
