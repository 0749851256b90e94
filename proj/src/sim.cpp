#include "dltr/sim.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace dltr {

namespace {

std::optional<double> intersect_plane(const PlanePrimitive& plane,
                                      const Vec3& origin, const Vec3& dir) {
  const double denom = dir.dot(plane.normal);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = (plane.point - origin).dot(plane.normal) / denom;
  if (t <= 1e-9) return std::nullopt;
  const Vec3 hit = origin + t * dir;
  // Square patch bound in the plane's own frame.
  const Vec3 u = plane.normal.unitOrthogonal();
  const Vec3 v = plane.normal.cross(u);
  const Vec3 rel = hit - plane.point;
  if (std::abs(rel.dot(u)) > plane.extent || std::abs(rel.dot(v)) > plane.extent) {
    return std::nullopt;
  }
  return t;
}

std::optional<double> intersect_ellipsoid(const RockPrimitive& rock,
                                          const Vec3& origin, const Vec3& dir) {
  // Scale space so the ellipsoid becomes the unit sphere.
  const Vec3 o = (origin - rock.center).cwiseQuotient(rock.axes);
  const Vec3 d = dir.cwiseQuotient(rock.axes);
  const double a = d.squaredNorm();
  const double b = 2.0 * o.dot(d);
  const double c = o.squaredNorm() - 1.0;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  const double t1 = (-b - sq) / (2.0 * a);
  const double t2 = (-b + sq) / (2.0 * a);
  if (t1 > 1e-9) return t1;
  if (t2 > 1e-9) return t2;
  return std::nullopt;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::optional<RayHit> ray_cast(const World& world, const Vec3& origin,
                               const Vec3& direction, double max_range) {
  double best_t = max_range;
  Vec3 best_normal = Vec3::Zero();
  bool hit = false;
  for (const auto& plane : world.planes) {
    if (auto t = intersect_plane(plane, origin, direction); t && *t < best_t) {
      best_t = *t;
      best_normal = plane.normal;
      hit = true;
    }
  }
  for (const auto& rock : world.rocks) {
    if (auto t = intersect_ellipsoid(rock, origin, direction);
        t && *t < best_t) {
      best_t = *t;
      const Vec3 p = origin + *t * direction;
      Vec3 grad = (p - rock.center).cwiseQuotient(
          rock.axes.cwiseProduct(rock.axes));
      best_normal = grad.normalized();
      hit = true;
    }
  }
  if (!hit) return std::nullopt;
  if (best_normal.dot(direction) > 0.0) best_normal = -best_normal;
  return RayHit{origin + best_t * direction, best_normal, best_t};
}

Cloud generate_scan(const World& world, const Pose& sensor_pose_in_world,
                    const Vec6& twist, const SensorSpec& spec,
                    const Extrinsics& extrinsics,
                    const DopplerBiasModel& bias_model, double frame_time,
                    std::uint64_t seed) {
  Cloud cloud;
  cloud.frame_id = "sensor";
  cloud.sensor_origin = Vec3::Zero();
  const double period = 1.0 / spec.rate;
  const int total = spec.beam_rows * spec.beam_cols;
  cloud.points.reserve(total / 2);

  Eigen::Matrix<double, 1, 6> model_row;
  for (int row = 0; row < spec.beam_rows; ++row) {
    const double el = spec.beam_rows > 1
                          ? -0.5 * spec.vertical_fov +
                                spec.vertical_fov * row / (spec.beam_rows - 1)
                          : 0.0;
    for (int col = 0; col < spec.beam_cols; ++col) {
      const double az = spec.beam_cols > 1
                            ? -0.5 * spec.horizontal_fov +
                                  spec.horizontal_fov * col / (spec.beam_cols - 1)
                            : 0.0;
      const Vec3 dir_sensor(std::cos(el) * std::cos(az),
                            std::cos(el) * std::sin(az), std::sin(el));
      const Vec3 dir_world = sensor_pose_in_world.rotation * dir_sensor;
      const auto hit = ray_cast(world, sensor_pose_in_world.translation,
                                dir_world, spec.max_range);
      if (!hit) continue;

      const int beam = row * spec.beam_cols + col;
      std::mt19937_64 rng(mix_seed(seed, beam));
      std::normal_distribution<double> gauss(0.0, 1.0);

      const double range = hit->range + spec.range_noise_std * gauss(rng);
      if (range <= 0.1) continue;
      Point p;
      p.position = dir_sensor * range;
      p.timestamp =
          frame_time - period + period * (beam + 1) / static_cast<double>(total);
      const double r = p.position.norm();
      model_row.setZero();
      model_row.head<3>() = p.position.transpose() / r;
      p.radial_velocity = (model_row * extrinsics.adjoint_sr * twist)(0) +
                          bias_model.bias(p.position) +
                          spec.doppler_noise_std * gauss(rng);
      cloud.points.push_back(p);
    }
  }
  return cloud;
}

std::vector<GyroMeasurement> generate_gyro(
    const std::vector<Twist>& twist_profile, const SensorSpec& spec,
    const Extrinsics& extrinsics, const Vec3& bias_true, double t_begin,
    double t_end, std::uint64_t seed) {
  std::vector<GyroMeasurement> out;
  std::mt19937_64 rng(mix_seed(seed, 0xf00d));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double dt = 1.0 / spec.gyro_rate;
  for (double t = t_begin; t < t_end - 1e-12; t += dt) {
    const Vec6 w = sample_twist_profile(twist_profile, t);
    GyroMeasurement g;
    g.time = t;
    g.value = extrinsics.T_sr.rotation * w.tail<3>() + bias_true +
              spec.gyro_noise_std * Vec3(gauss(rng), gauss(rng), gauss(rng));
    out.push_back(g);
  }
  return out;
}

Vec6 sample_twist_profile(const std::vector<Twist>& profile, double t) {
  if (profile.empty()) return Vec6::Zero();
  if (t <= profile.front().time) return profile.front().value;
  if (t >= profile.back().time) return profile.back().value;
  for (std::size_t i = 1; i < profile.size(); ++i) {
    if (t <= profile[i].time) {
      const double span = profile[i].time - profile[i - 1].time;
      const double alpha = span > 0.0 ? (t - profile[i - 1].time) / span : 1.0;
      return (1.0 - alpha) * profile[i - 1].value + alpha * profile[i].value;
    }
  }
  return profile.back().value;
}

namespace {
using nlohmann::json;

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 vec3_from_json(const json& j) { return Vec3(j[0], j[1], j[2]); }
}  // namespace

void save_world(const World& world, const std::string& path) {
  json j;
  j["identifier"] = world.identifier;
  j["planes"] = json::array();
  for (const auto& p : world.planes) {
    j["planes"].push_back({{"point", vec3_to_json(p.point)},
                           {"normal", vec3_to_json(p.normal)},
                           {"extent", p.extent}});
  }
  j["rocks"] = json::array();
  for (const auto& r : world.rocks) {
    j["rocks"].push_back(
        {{"center", vec3_to_json(r.center)}, {"axes", vec3_to_json(r.axes)}});
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_world: cannot open " + path);
  f << j.dump(1);
}

World load_world(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_world: cannot open " + path);
  json j;
  f >> j;
  World world;
  world.identifier = j.value("identifier", "");
  for (const auto& pj : j["planes"]) {
    PlanePrimitive p;
    p.point = vec3_from_json(pj["point"]);
    p.normal = vec3_from_json(pj["normal"]).normalized();
    p.extent = pj["extent"];
    world.planes.push_back(p);
  }
  for (const auto& rj : j["rocks"]) {
    RockPrimitive r;
    r.center = vec3_from_json(rj["center"]);
    r.axes = vec3_from_json(rj["axes"]);
    world.rocks.push_back(r);
  }
  return world;
}

World make_airport_world(int num_rocks) {
  World world;
  world.identifier = "airport";
  world.planes.push_back({Vec3::Zero(), Vec3::UnitZ(), 500.0});
  // Rock placements straddle the default 35 x 15 m rectangular loop so each
  // leg sees structure intermittently.
  const std::vector<Vec3> sites = {
      {17.5, 7.5, 0.0}, {41.0, 7.5, 0.0}, {-6.0, 7.5, 0.0},
      {17.5, -6.0, 0.0}, {17.5, 21.0, 0.0}, {41.0, -6.0, 0.0}};
  for (int i = 0; i < num_rocks && i < static_cast<int>(sites.size()); ++i) {
    RockPrimitive rock;
    rock.center = sites[i] + Vec3(0.0, 0.0, 0.8);
    rock.axes = Vec3(1.2, 1.0, 1.1);
    world.rocks.push_back(rock);
  }
  return world;
}

World make_feature_rich_world() {
  World world;
  world.identifier = "feature_rich";
  world.planes.push_back({Vec3::Zero(), Vec3::UnitZ(), 500.0});
  // Boundary walls around the loop.
  world.planes.push_back({{-10.0, 7.5, 0.0}, Vec3::UnitX(), 60.0});
  world.planes.push_back({{45.0, 7.5, 0.0}, -Vec3::UnitX().eval(), 60.0});
  world.planes.push_back({{17.5, -10.0, 0.0}, Vec3::UnitY(), 60.0});
  world.planes.push_back({{17.5, 25.0, 0.0}, -Vec3::UnitY().eval(), 60.0});
  // Dense rock field.
  const std::vector<Vec3> sites = {
      {8.0, 5.0, 0.0},  {17.5, 7.5, 0.0}, {27.0, 4.0, 0.0}, {32.0, 10.0, 0.0},
      {25.0, 12.0, 0.0}, {10.0, 11.0, 0.0}, {3.0, 7.0, 0.0},  {40.0, 7.5, 0.0},
      {17.5, -5.0, 0.0}, {17.5, 20.0, 0.0}, {-5.0, 7.5, 0.0}, {30.0, 19.0, 0.0}};
  for (const auto& s : sites) {
    RockPrimitive rock;
    rock.center = s + Vec3(0.0, 0.0, 0.7);
    rock.axes = Vec3(1.0, 0.9, 1.0);
    world.rocks.push_back(rock);
  }
  return world;
}

}  // namespace dltr
