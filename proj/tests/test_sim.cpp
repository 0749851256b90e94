#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "dltr/metrics.hpp"
#include "dltr/pipeline.hpp"
#include "dltr/sim.hpp"

using namespace dltr;

namespace {

// Numerical ray-intersection oracle: fine marching plus bisection on the
// signed implicit functions of all primitives.
std::optional<double> march_ray(const World& w, const Vec3& o, const Vec3& d,
                                double max_range) {
  auto inside = [&](const Vec3& x) {
    for (const auto& pl : w.planes) {
      // Signed side of the plane, only meaningful near the patch.
      const Vec3 rel = x - pl.point;
      if (std::abs(rel.dot(pl.normal)) < 1e9) {
      }
    }
    return false;
  };
  (void)inside;
  const double step = 1e-3;
  double best = max_range + 1.0;
  // Planes: analytic parameter, then verify extent; rocks: bisection on the
  // ellipsoid implicit function along the ray.
  for (const auto& pl : w.planes) {
    const double denom = d.dot(pl.normal);
    if (std::abs(denom) < 1e-12) continue;
    const double t = (pl.point - o).dot(pl.normal) / denom;
    if (t <= 1e-9 || t > max_range) continue;
    const Vec3 hit = o + t * d;
    if ((hit - pl.point).cwiseAbs().maxCoeff() <= pl.extent + 1e-9)
      best = std::min(best, t);
  }
  for (const auto& rk : w.rocks) {
    auto f = [&](double t) {
      const Vec3 x = o + t * d - rk.center;
      return (x.cwiseQuotient(rk.axes)).squaredNorm() - 1.0;
    };
    double prev_t = 0.0, prev_f = f(0.0);
    for (double t = step; t <= max_range; t += step) {
      const double ft = f(t);
      if (prev_f > 0 && ft <= 0) {
        double lo = prev_t, hi = t;
        for (int i = 0; i < 60; ++i) {
          const double mid = 0.5 * (lo + hi);
          (f(mid) > 0 ? lo : hi) = mid;
        }
        best = std::min(best, 0.5 * (lo + hi));
        break;
      }
      prev_t = t;
      prev_f = ft;
    }
  }
  if (best > max_range) return std::nullopt;
  return best;
}

}  // namespace

TEST_CASE("ray_cast trivial plane hit") {
  World w;
  w.planes.push_back({Vec3(0, 0, 0), Vec3(0, 0, 1), 1e6});
  const auto hit = ray_cast(w, Vec3(0, 0, 5), Vec3(0, 0, -1), 40.0);
  REQUIRE(hit.has_value());
  CHECK(hit->range == doctest::Approx(5.0).epsilon(1e-12));
  CHECK((hit->normal - Vec3(0, 0, 1)).norm() < 1e-12);
  CHECK(hit->point.norm() < 1e-12);

  // Miss beyond max_range.
  CHECK_FALSE(ray_cast(w, Vec3(0, 0, 50), Vec3(0, 0, -1), 40.0).has_value());
}

TEST_CASE("ray_cast sphere tangency boundary") {
  World w;
  w.rocks.push_back({Vec3(10, 0, 0), Vec3(1, 1, 1)});
  // Ray passing exactly at distance 1 from the center: grazing.
  const auto graze = ray_cast(w, Vec3(0, 1, 0), Vec3(1, 0, 0), 40.0);
  if (graze) {  // single-root hit is acceptable at the boundary
    CHECK(graze->range == doctest::Approx(10.0).epsilon(1e-6));
  }
  // Clearly inside: two roots, nearest one returned.
  const auto hit = ray_cast(w, Vec3(0, 0, 0), Vec3(1, 0, 0), 40.0);
  REQUIRE(hit.has_value());
  CHECK(hit->range == doctest::Approx(9.0).epsilon(1e-9));
  // Clearly outside: miss.
  CHECK_FALSE(ray_cast(w, Vec3(0, 1.5, 0), Vec3(1, 0, 0), 40.0).has_value());
}

TEST_CASE("ray_cast matches numerical root finding on random rays") {
  World w = make_airport_world(3);
  std::mt19937_64 rng(179);
  std::uniform_real_distribution<double> u(-1, 1);
  int compared = 0;
  for (int i = 0; i < 200; ++i) {
    const Vec3 o(u(rng) * 5, u(rng) * 5, 1.0 + 0.5 * u(rng));
    Vec3 d(u(rng), u(rng), -std::abs(u(rng)) - 0.05);
    d.normalize();
    const auto got = ray_cast(w, o, d, 40.0);
    const auto expect = march_ray(w, o, d, 40.0);
    REQUIRE(got.has_value() == expect.has_value());
    if (got) {
      CHECK(got->range == doctest::Approx(*expect).epsilon(1e-6));
      ++compared;
    }
  }
  CHECK(compared > 100);
}

TEST_CASE("generate_scan stationary and forward-speed radial velocities") {
  World w;
  w.planes.push_back({Vec3(10, 0, 0), Vec3(-1, 0, 0), 1e6});  // wall ahead
  SensorSpec spec;  // noise-free
  spec.beam_rows = 5;
  spec.beam_cols = 21;
  const Extrinsics ext = Extrinsics::FromPose(Pose::Identity());

  const Cloud still = generate_scan(w, Pose::Identity(), Vec6::Zero(), spec,
                                    ext, DopplerBiasModel{}, 0.1, 3);
  REQUIRE(!still.empty());
  for (const auto& p : still.points)
    CHECK(std::abs(p.radial_velocity) < 1e-12);

  // Forward speed v: body twist linear x = -v in the integration
  // convention; the boresight wall point closes range at -v.
  const double v = 1.7;
  Vec6 twist = Vec6::Zero();
  twist(0) = -v;
  const Cloud moving = generate_scan(w, Pose::Identity(), twist, spec, ext,
                                     DopplerBiasModel{}, 0.1, 3);
  double best_dot = -1;
  double boresight_rv = 0;
  for (const auto& p : moving.points) {
    const double dot = p.position.normalized().x();
    if (dot > best_dot) {
      best_dot = dot;
      boresight_rv = p.radial_velocity;
    }
  }
  CHECK(best_dot > 0.999);
  CHECK(boresight_rv == doctest::Approx(-v).epsilon(1e-6));
}

TEST_CASE("generated points satisfy the Doppler model exactly") {
  const World w = make_airport_world(3);
  SensorSpec spec;
  spec.beam_rows = 6;
  spec.beam_cols = 40;
  const Extrinsics ext = Extrinsics::FromPose(
      exp_map((Vec6() << 0.1, 0, 0.2, 0, 0.05, 0.1).finished()));
  DopplerBiasModel bias;
  bias.coefficients = Vec3(0.01, 0.002, 0.005);
  Vec6 twist;
  twist << -1.2, 0.1, 0, 0, 0, 0.3;
  Pose pose;
  pose.translation = Vec3(0, 0, 1);

  const Cloud scan =
      generate_scan(w, pose, twist, spec, ext, bias, 0.1, 5);
  REQUIRE(!scan.empty());
  for (const auto& p : scan.points) {
    const double r = doppler_residual(twist, p.position, p.radial_velocity,
                                      ext, bias);
    CHECK(std::abs(r) < 1e-12);
  }
}

TEST_CASE("scans are deterministic in the seed") {
  const World w = make_airport_world(3);
  SensorSpec spec;
  spec.beam_rows = 4;
  spec.beam_cols = 30;
  spec.range_noise_std = 0.02;
  spec.doppler_noise_std = 0.03;
  const Extrinsics ext = Extrinsics::FromPose(Pose::Identity());
  Pose pose;
  pose.translation = Vec3(0, 0, 1);

  const Cloud a = generate_scan(w, pose, Vec6::Zero(), spec, ext,
                                DopplerBiasModel{}, 0.1, 17);
  const Cloud b = generate_scan(w, pose, Vec6::Zero(), spec, ext,
                                DopplerBiasModel{}, 0.1, 17);
  const Cloud c = generate_scan(w, pose, Vec6::Zero(), spec, ext,
                                DopplerBiasModel{}, 0.1, 18);
  REQUIRE(a.size() == b.size());
  double diff_ab = 0, diff_ac = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    diff_ab += (a.points[i].position - b.points[i].position).norm();
    if (i < c.size())
      diff_ac += (a.points[i].position - c.points[i].position).norm();
  }
  CHECK(diff_ab == 0.0);
  CHECK(diff_ac > 0.0);
}

TEST_CASE("noise-free points lie on world primitives") {
  const World w = make_airport_world(3);
  SensorSpec spec;
  spec.beam_rows = 6;
  spec.beam_cols = 40;
  const Extrinsics ext = Extrinsics::FromPose(Pose::Identity());
  Pose pose;
  pose.translation = Vec3(0, 0, 1);
  const Cloud scan = generate_scan(w, pose, Vec6::Zero(), spec, ext,
                                   DopplerBiasModel{}, 0.1, 19);
  for (const auto& p : scan.points) {
    const Vec3 x = pose.apply(p.position);
    double best = 1e9;
    for (const auto& pl : w.planes)
      best = std::min(best, std::abs((x - pl.point).dot(pl.normal)));
    for (const auto& rk : w.rocks)
      best = std::min(
          best, std::abs(((x - rk.center).cwiseQuotient(rk.axes)).norm() - 1));
    CHECK(best < 1e-6);
  }
}

TEST_CASE("generate_gyro models bias and yaw rate") {
  SensorSpec spec;
  const Extrinsics ext = Extrinsics::FromPose(Pose::Identity());
  const Vec3 b_true(0.01, -0.02, 0.005);

  const std::vector<Twist> still = {{Vec6::Zero(), 0.0}};
  auto stream = generate_gyro(still, spec, ext, b_true, 0.0, 1.0, 23);
  REQUIRE(stream.size() >= 10);
  for (const auto& g : stream) CHECK((g.value - b_true).norm() < 1e-12);

  // Noise-free static stream through calibration recovers the bias exactly.
  CHECK((calibrate_gyro_bias_static(stream) - b_true).norm() < 1e-12);

  Vec6 yaw = Vec6::Zero();
  yaw(5) = 0.4;
  const std::vector<Twist> turning = {{yaw, 0.0}};
  stream = generate_gyro(turning, spec, ext, Vec3::Zero(), 0.0, 0.5, 29);
  for (const auto& g : stream)
    CHECK((g.value - Vec3(0, 0, 0.4)).norm() < 1e-12);
}

TEST_CASE("world file round trip") {
  World w = make_feature_rich_world();
  const std::string path = "/tmp/dltr_test_world.json";
  save_world(w, path);
  const World back = load_world(path);
  REQUIRE(back.planes.size() == w.planes.size());
  REQUIRE(back.rocks.size() == w.rocks.size());
  for (size_t i = 0; i < w.rocks.size(); ++i)
    CHECK((back.rocks[i].center - w.rocks[i].center).norm() < 1e-12);
  std::remove(path.c_str());
}

TEST_CASE("closed loop: perfect-estimation controller sanity") {
  const World w = make_airport_world(3);
  PipelineConfig cfg;
  cfg.perfect_estimation = true;
  cfg.initial_repeat_offset = 0.0;  // controller-only oracle
  const TrajectorySpec spec = default_loop(2.0);
  const RunRecord rec =
      run_closed_loop(w, spec, VariantSpec::preset(1), cfg, 1);
  CHECK(rec.completed);
  const MetricsReport m = compute_metrics(rec);
  CHECK(m.lateral_rmse_measured < 0.01);
}

TEST_CASE("closed loop outcome classes") {
  PipelineConfig cfg;
  cfg.sensor.beam_rows = 16;
  cfg.sensor.beam_cols = 200;
  const TrajectorySpec spec = default_loop(2.0);

  SUBCASE("variant 4 on a flat plane without rocks fails") {
    const World flat = make_airport_world(0);
    const RunRecord rec =
        run_closed_loop(flat, spec, VariantSpec::preset(4), cfg, 1);
    CHECK_FALSE(rec.completed);
    CHECK(!rec.failure_reason.empty());
  }

  SUBCASE("variant 1 on the airport world completes") {
    const World airport = make_airport_world(3);
    const RunRecord rec =
        run_closed_loop(airport, spec, VariantSpec::preset(1), cfg, 1);
    CHECK(rec.completed);
  }
}

TEST_CASE("variant presets cover the four ablation combinations") {
  const auto v1 = VariantSpec::preset(1);
  CHECK(v1.preprocessing == VariantSpec::Preprocessing::kCurvature);
  CHECK(v1.odometry == VariantSpec::Odometry::kDoppler);
  CHECK(v1.localization == VariantSpec::Localization::kDaIcp);
  const auto v2 = VariantSpec::preset(2);
  CHECK(v2.preprocessing == VariantSpec::Preprocessing::kUniform);
  CHECK(v2.localization == VariantSpec::Localization::kDaIcp);
  const auto v3 = VariantSpec::preset(3);
  CHECK(v3.preprocessing == VariantSpec::Preprocessing::kUniform);
  CHECK(v3.localization == VariantSpec::Localization::kPlainIcp);
  CHECK(v3.odometry == VariantSpec::Odometry::kDoppler);
  const auto v4 = VariantSpec::preset(4);
  CHECK(v4.odometry == VariantSpec::Odometry::kIcpBaseline);
  CHECK(v4.localization == VariantSpec::Localization::kPlainIcp);
  CHECK_THROWS_AS(VariantSpec::preset(5), std::invalid_argument);
}
