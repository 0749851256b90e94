#include "dltr/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dltr {

namespace {

using nlohmann::json;

[[noreturn]] void unknown_key(const std::string& section,
                              const std::string& key) {
  throw std::runtime_error("config: unknown key '" + section + "." + key + "'");
}

template <typename F>
void for_keys(const json& obj, const std::string& section, F&& handle) {
  if (!obj.is_object()) {
    throw std::runtime_error("config: section '" + section +
                             "' must be an object");
  }
  for (const auto& [key, value] : obj.items()) {
    if (!handle(key, value)) unknown_key(section, key);
  }
}

Vec3 vec3_of(const json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw std::runtime_error("config: expected a 3-array");
  }
  return Vec3(j[0], j[1], j[2]);
}

Vec6 vec6_of(const json& j) {
  if (!j.is_array() || j.size() != 6) {
    throw std::runtime_error("config: expected a 6-array");
  }
  Vec6 v;
  for (int i = 0; i < 6; ++i) v(i) = j[i];
  return v;
}

Pose pose_of(const json& j) {
  if (!j.is_array() || j.size() != 12) {
    throw std::runtime_error("config: pose expects 12 row-major floats");
  }
  Pose p;
  int k = 0;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = j[k++];
    p.translation(r) = j[k++];
  }
  return p;
}

void parse_cloud(const json& j, CurvatureConfig& c) {
  for_keys(j, "cloud", [&](const std::string& k, const json& v) {
    if (k == "knn_k") c.knn_k = v;
    else if (k == "flat_threshold") c.flat_threshold = v;
    else if (k == "cluster_radius") c.cluster_radius = v;
    else if (k == "min_cluster_size") c.min_cluster_size = v;
    else if (k == "coarse_voxel") c.coarse_voxel = v;
    else if (k == "fine_voxel") c.fine_voxel = v;
    else return false;
    return true;
  });
}

void parse_odometry(const json& j, PipelineConfig& cfg) {
  for_keys(j, "odometry", [&](const std::string& k, const json& v) {
    if (k == "qc_diag") cfg.odometry.Qc = vec6_of(v).asDiagonal();
    else if (k == "qz_diag") {
      if (!v.is_array() || v.size() != 4) {
        throw std::runtime_error("config: odometry.qz_diag expects 4 values");
      }
      Eigen::Vector4d d;
      for (int i = 0; i < 4; ++i) d(i) = v[i];
      cfg.odometry.Qz = d.asDiagonal();
    } else if (k == "r_dop") cfg.odometry.R_dop = v;
    else if (k == "r_gyro_diag") cfg.odometry.R_gyro = vec3_of(v).asDiagonal();
    else if (k == "integration_steps") cfg.odometry.integration_steps = v;
    else if (k == "doppler_outlier_gate_sigma")
      cfg.odometry.doppler_outlier_gate_sigma = v;
    else if (k == "gyro_bias") {
      for_keys(v, "odometry.gyro_bias", [&](const std::string& k2,
                                            const json& v2) {
        if (k2 == "zeta") cfg.gyro_bias.ema_weight = v2;
        else if (k2 == "min_update_interval")
          cfg.gyro_bias.min_update_interval = v2;
        else if (k2 == "gate") cfg.gyro_bias.consistency_gate = v2;
        else return false;
        return true;
      });
    } else if (k == "doppler_bias_coeffs")
      cfg.doppler_bias.coefficients = vec3_of(v);
    else return false;
    return true;
  });
}

void parse_daicp(const json& j, PipelineConfig& cfg) {
  for_keys(j, "daicp", [&](const std::string& k, const json& v) {
    if (k == "gamma") cfg.degeneracy.gamma = v;
    else if (k == "epsilon") cfg.degeneracy.epsilon = v;
    else if (k == "max_iterations") cfg.degeneracy.max_iterations = v;
    else if (k == "convergence_tol") cfg.degeneracy.convergence_tol = v;
    else if (k == "beta") cfg.association.beta = v;
    else if (k == "knn_k") cfg.association.knn_k = v;
    else if (k == "sample_cap") cfg.association.sample_cap = v;
    else if (k == "distance_gate") cfg.association.distance_gate = v;
    else if (k == "residual_gate") cfg.association.residual_gate = v;
    else if (k == "range_std") cfg.noise.range_std = v;
    else if (k == "bearing_std") cfg.noise.bearing_std = v;
    else if (k == "sigma_m") cfg.noise.sigma_m = v;
    else if (k == "sigma_n") cfg.noise.sigma_n = v;
    else if (k == "cauchy_c") cfg.fusion.cauchy_c = v;
    else if (k == "fusion_max_iterations") cfg.fusion.max_iterations = v;
    else if (k == "outlier_gate_t") cfg.fusion.outlier_gate_t = v;
    else if (k == "outlier_gate_r") cfg.fusion.outlier_gate_r = v;
    else if (k == "seed") cfg.fusion.seed = v;
    else return false;
    return true;
  });
}

void parse_sensor(const json& j, SensorSpec& s) {
  for_keys(j, "sensor", [&](const std::string& k, const json& v) {
    if (k == "horizontal_fov_deg") s.horizontal_fov = double(v) * M_PI / 180.0;
    else if (k == "vertical_fov_deg") s.vertical_fov = double(v) * M_PI / 180.0;
    else if (k == "max_range") s.max_range = v;
    else if (k == "rate") s.rate = v;
    else if (k == "beam_rows") s.beam_rows = v;
    else if (k == "beam_cols") s.beam_cols = v;
    else if (k == "range_noise_std") s.range_noise_std = v;
    else if (k == "doppler_noise_std") s.doppler_noise_std = v;
    else if (k == "gyro_rate") s.gyro_rate = v;
    else if (k == "gyro_noise_std") s.gyro_noise_std = v;
    else return false;
    return true;
  });
}

void parse_map(const json& j, MapConfig& m) {
  for_keys(j, "map", [&](const std::string& k, const json& v) {
    if (k == "translation_threshold") m.translation_threshold = v;
    else if (k == "rotation_threshold") m.rotation_threshold = v;
    else if (k == "frames_per_submap") m.frames_per_submap = v;
    else return false;
    return true;
  });
}

void parse_tracker(const json& j, TrackerConfig& t) {
  for_keys(j, "tracker", [&](const std::string& k, const json& v) {
    if (k == "lookahead") t.lookahead = v;
    else if (k == "max_yaw_rate") t.max_yaw_rate = v;
    else if (k == "accel") t.accel = v;
    else if (k == "goal_tolerance") t.goal_tolerance = v;
    else return false;
    return true;
  });
}

void parse_pipeline(const json& j, PipelineConfig& cfg) {
  for_keys(j, "pipeline", [&](const std::string& k, const json& v) {
    if (k == "uniform_voxel") cfg.uniform_voxel = v;
    else if (k == "failure_lateral") cfg.failure_lateral = v;
    else if (k == "failure_rejections") cfg.failure_rejections = v;
    else if (k == "initial_repeat_offset") cfg.initial_repeat_offset = v;
    else if (k == "max_repeat_frames") cfg.max_repeat_frames = v;
    else if (k == "perfect_estimation") cfg.perfect_estimation = v;
    else if (k == "repeat_gyro_bias_drift") {
      if (!v.is_array() || v.size() != 3)
        throw std::runtime_error(
            "config: pipeline.repeat_gyro_bias_drift needs 3 entries");
      for (int i = 0; i < 3; ++i) cfg.repeat_gyro_bias_drift(i) = v[i];
    }
    else return false;
    return true;
  });
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& json_text) {
  json root = json::parse(json_text);
  PipelineConfig cfg;
  for_keys(root, "", [&](const std::string& k, const json& v) {
    if (k == "cloud") parse_cloud(v, cfg.curvature);
    else if (k == "odometry") parse_odometry(v, cfg);
    else if (k == "daicp") parse_daicp(v, cfg);
    else if (k == "sensor") parse_sensor(v, cfg.sensor);
    else if (k == "map") parse_map(v, cfg.map);
    else if (k == "tracker") parse_tracker(v, cfg.tracker);
    else if (k == "pipeline") parse_pipeline(v, cfg);
    else if (k == "extrinsics") cfg.T_sr = pose_of(v);
    else return false;
    return true;
  });
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_pipeline_config(ss.str());
}

}  // namespace dltr
