#pragma once

// Synthetic worlds (finite planes + rocks), FMCW sensor model with
// per-point radial velocity, and gyro stream generation. The closed-loop
// teach/repeat harness lives in pipeline.hpp.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dltr/cloud.hpp"
#include "dltr/lie.hpp"
#include "dltr/odometry.hpp"

namespace dltr {

struct PlanePrimitive {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();   // unit
  double extent = 1e6;           // half-size of the square patch, m
};

struct RockPrimitive {
  Vec3 center = Vec3::Zero();
  Vec3 axes = Vec3::Ones();  // ellipsoid semi-axes; sphere when equal
};

struct World {
  std::vector<PlanePrimitive> planes;
  std::vector<RockPrimitive> rocks;
  std::string identifier;
};

struct SensorSpec {
  double horizontal_fov = 120.0 * M_PI / 180.0;
  double vertical_fov = 19.2 * M_PI / 180.0;
  double max_range = 40.0;         // m
  double rate = 10.0;              // Hz
  int beam_rows = 32;
  int beam_cols = 400;
  double range_noise_std = 0.0;    // m
  double doppler_noise_std = 0.0;  // m/s
  double gyro_rate = 100.0;        // Hz
  double gyro_noise_std = 0.0;     // rad/s
};

struct RayHit {
  Vec3 point;
  Vec3 normal;  // unit, oriented toward the ray origin
  double range;
};

/// Nearest analytic intersection within max_range; nullopt on miss.
std::optional<RayHit> ray_cast(const World& world, const Vec3& origin,
                               const Vec3& direction, double max_range);

/// Rasterizes the FOV and produces a sensor-frame cloud. pose maps sensor
/// coordinates into the world; twist is the body-centric velocity in the
/// integration convention (see odometry.hpp); radial velocities satisfy the
/// Doppler measurement model exactly up to the injected noise. Per-point
/// timestamps are spread uniformly over [frame_time - 1/rate, frame_time].
Cloud generate_scan(const World& world, const Pose& sensor_pose_in_world,
                    const Vec6& twist, const SensorSpec& spec,
                    const Extrinsics& extrinsics,
                    const DopplerBiasModel& bias_model, double frame_time,
                    std::uint64_t seed);

/// Gyro samples over [t_begin, t_end): y = R_sr D w(t) + b_true + noise.
std::vector<GyroMeasurement> generate_gyro(
    const std::vector<Twist>& twist_profile, const SensorSpec& spec,
    const Extrinsics& extrinsics, const Vec3& bias_true, double t_begin,
    double t_end, std::uint64_t seed);

/// Twist sampled from a piecewise-linear profile.
Vec6 sample_twist_profile(const std::vector<Twist>& profile, double t);

/// World file IO (JSON listing of primitives).
void save_world(const World& world, const std::string& path);
World load_world(const std::string& path);

/// Built-in worlds used by the experiments.
World make_airport_world(int num_rocks);       // flat plane + sparse rocks
World make_feature_rich_world();               // plane + walls + many rocks

}  // namespace dltr
