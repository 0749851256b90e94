#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "dltr/daicp.hpp"

using namespace dltr;

namespace {

Vec6 random_tangent(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vec6 xi;
  for (int i = 0; i < 6; ++i) xi(i) = u(rng);
  return xi;
}

Mat6 random_spd(std::mt19937_64& rng, double cond_scale = 1.0) {
  std::normal_distribution<double> n01;
  Mat6 A;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) A(i, j) = n01(rng);
  return A * A.transpose() + cond_scale * Mat6::Identity();
}

// Flat ground patch with attributes, the canonical degenerate scene.
Cloud attributed_plane(double half, double step) {
  Cloud c;
  c.sensor_origin = Vec3(0, 0, 5);
  for (double x = -half; x <= half + 1e-9; x += step)
    for (double y = -half; y <= half + 1e-9; y += step) {
      Point p;
      p.position = Vec3(x, y, 0);
      p.normal = Vec3(0, 0, 1);
      p.curvature = 0.0;
      p.cluster_id = 0;
      c.points.push_back(p);
    }
  return c;
}

// Plane plus spherical caps: enough structure to constrain all six axes.
Cloud feature_rich_cloud() {
  Cloud c = attributed_plane(6.0, 0.25);
  std::mt19937_64 rng(113);
  std::uniform_real_distribution<double> su(-1.2, 1.2);
  const Vec3 centers[] = {Vec3(3, 3, 0), Vec3(-3, 2, 0), Vec3(0, -3.5, 0),
                          Vec3(-2.5, -2.5, 0)};
  for (const Vec3& ctr : centers) {
    const double R = 0.8;
    for (int i = 0; i < 250; ++i) {
      const double u = su(rng), v = su(rng) * 0.5;
      Point p;
      p.position = ctr + Vec3(R * std::sin(u) * std::cos(v),
                              R * std::sin(v), R * std::cos(u) * std::cos(v));
      const Vec3 n = (p.position - ctr).normalized();
      p.normal = n.z() >= 0 ? n : Vec3(-n.x(), -n.y(), -n.z());
      p.curvature = 1.0 / (R * R);
      p.cluster_id = 1;
      c.points.push_back(p);
    }
  }
  return c;
}

std::vector<Correspondence> identity_pairs(const Cloud& c) {
  std::vector<Correspondence> out;
  for (int i = 0; i < (int)c.size(); ++i) out.push_back({i, i});
  return out;
}

}  // namespace

TEST_CASE("compute_normalization_scales medians and clamps") {
  AssociationConfig cfg;
  // Regular grid of spacing d: nearest-neighbour distance is d everywhere.
  const double d = 0.5;
  Cloud grid;
  for (int x = 0; x < 10; ++x)
    for (int y = 0; y < 10; ++y) {
      Point p;
      p.position = Vec3(x * d, y * d, 0);
      p.curvature = 0.7;
      grid.points.push_back(p);
    }
  KdTree t(grid);
  const auto s = compute_normalization_scales(grid, t, cfg, 1);
  CHECK(s.eta_d == doctest::Approx(d).epsilon(1e-9));
  CHECK(s.eta_kappa == doctest::Approx(0.7).epsilon(1e-9));

  // All-flat map clamps eta_kappa to 1e-6.
  for (auto& p : grid.points) p.curvature = 0.0;
  const auto s0 = compute_normalization_scales(grid, t, cfg, 1);
  CHECK(s0.eta_kappa == doctest::Approx(1e-6));
}

TEST_CASE("associate limiting cases") {
  Cloud map;
  // Two candidates equidistant from the query, different curvatures.
  Point a, b;
  a.position = Vec3(1, 0, 0);
  a.curvature = 0.5;
  b.position = Vec3(-1, 0, 0);
  b.curvature = 1.5;
  map.points = {a, b};
  KdTree t(map);
  NormalizationScales s;
  s.eta_d = 1.0;
  s.eta_kappa = 1.0;

  AssociationConfig cfg;
  cfg.distance_gate = 10.0;
  cfg.beta = 0.0;  // curvature only
  auto hit = associate(Vec3(0, 0, 0), 0.5, map, t, s, cfg);
  REQUIRE(hit.has_value());
  CHECK(*hit == 0);  // matching curvature wins

  // Large beta: pure spatial nearest neighbour.
  cfg.beta = 1e9;
  Point c;
  c.position = Vec3(0.2, 0, 0);
  c.curvature = 99.0;  // terrible curvature match but closest
  map.points.push_back(c);
  KdTree t2(map);
  hit = associate(Vec3(0, 0, 0), 0.5, map, t2, s, cfg);
  REQUIRE(hit.has_value());
  CHECK(*hit == 2);

  // Nearest beyond the distance gate: none.
  cfg.distance_gate = 0.05;
  CHECK_FALSE(associate(Vec3(10, 10, 10), 0.5, map, t2, s, cfg).has_value());
}

TEST_CASE("associate matches brute-force scoring on random scenes") {
  std::mt19937_64 rng(127);
  std::uniform_real_distribution<double> u(-3, 3), ck(0, 2);
  AssociationConfig cfg;
  cfg.distance_gate = 10.0;
  NormalizationScales s;
  s.eta_d = 0.8;
  s.eta_kappa = 0.9;
  for (int trial = 0; trial < 50; ++trial) {
    Cloud map;
    for (int i = 0; i < 100; ++i) {
      Point p;
      p.position = Vec3(u(rng), u(rng), u(rng));
      p.curvature = ck(rng);
      map.points.push_back(p);
    }
    KdTree t(map);
    const Vec3 q(u(rng), u(rng), u(rng));
    const double kq = ck(rng);
    const auto got = associate(q, kq, map, t, s, cfg);

    // Oracle: exhaustive scoring over the k nearest.
    auto knn = t.knn(q, cfg.knn_k);
    double best = 1e300;
    int best_i = -1;
    double best_d = 1e300;
    for (auto& [i, dist] : knn) {
      const double score =
          std::abs(kq - *map.points[i].curvature) / s.eta_kappa +
          cfg.beta * dist / s.eta_d;
      if (score < best - 1e-15 ||
          (std::abs(score - best) <= 1e-15 &&
           (dist < best_d - 1e-15 ||
            (std::abs(dist - best_d) <= 1e-15 && i < best_i)))) {
        best = score;
        best_i = i;
        best_d = dist;
      }
    }
    REQUIRE(got.has_value());
    CHECK(*got == best_i);
  }
}

TEST_CASE("filter_correspondences gates") {
  Cloud scan, map;
  AssociationConfig cfg;  // distance_gate 1.0, residual_gate 0.3

  Point p0, q0;
  p0.position = Vec3(1, 1, 0);
  q0.position = Vec3(1, 1, 0);
  q0.normal = Vec3(0, 0, 1);
  Point p1, q1;
  p1.position = Vec3(3, 0, 0);
  q1.position = Vec3(3 + 2 * cfg.distance_gate, 0, 0);  // 2x the gate away
  q1.normal = Vec3(0, 0, 1);
  Point p2, q2;
  p2.position = Vec3(0, 2, 0.5);  // 0.5 m point-to-plane residual
  q2.position = Vec3(0, 2, 0);
  q2.normal = Vec3(0, 0, 1);
  scan.points = {p0, p1, p2};
  map.points = {q0, q1, q2};

  const std::vector<Correspondence> pairs = {{0, 0}, {1, 1}, {2, 2}};
  auto coarse =
      filter_correspondences(pairs, scan, map, Pose::Identity(), cfg, false);
  REQUIRE(coarse.size() == 2);  // the 2x-gate pair dropped
  CHECK(coarse[0].scan_index == 0);
  CHECK(coarse[1].scan_index == 2);

  auto fine =
      filter_correspondences(pairs, scan, map, Pose::Identity(), cfg, true);
  REQUIRE(fine.size() == 1);  // residual gate also drops the 0.5 m pair
  CHECK(fine[0].scan_index == 0);
}

TEST_CASE("filter_correspondences removes labeled outliers") {
  std::mt19937_64 rng(131);
  std::uniform_real_distribution<double> u(-3, 3);
  Cloud scan, map;
  AssociationConfig cfg;
  std::vector<Correspondence> pairs;
  std::vector<bool> outlier;
  for (int i = 0; i < 100; ++i) {
    Point p, q;
    p.position = Vec3(u(rng), u(rng), 0);
    const bool bad = (i % 10 == 0);
    q.position = p.position + (bad ? Vec3(0, 0, 2 * cfg.residual_gate)
                                   : Vec3(0, 0, 0.01));
    q.normal = Vec3(0, 0, 1);
    scan.points.push_back(p);
    map.points.push_back(q);
    pairs.push_back({i, i});
    outlier.push_back(bad);
  }
  auto kept =
      filter_correspondences(pairs, scan, map, Pose::Identity(), cfg, true);
  for (const auto& c : kept) CHECK_FALSE(outlier[c.scan_index]);
  CHECK(kept.size() == 90);
}

TEST_CASE("residual_variance components and floor") {
  NoiseConfig zero;
  zero.range_std = zero.bearing_std = zero.sigma_m = zero.sigma_n = 0.0;
  CHECK(residual_variance(Vec3(3, 0, 0), Vec3(3, 0, 0), Vec3(0, 0, 1),
                          Pose::Identity(), zero) == doctest::Approx(1e-12));

  NoiseConfig map_only = zero;
  map_only.sigma_m = 0.05;
  CHECK(residual_variance(Vec3(3, 1, 0), Vec3(3, 1, 0), Vec3(0, 0, 1),
                          Pose::Identity(), map_only) ==
        doctest::Approx(0.05 * 0.05));
}

TEST_CASE("residual_variance matches Monte-Carlo sampling") {
  std::mt19937_64 rng(137);
  std::normal_distribution<double> n01;
  NoiseConfig noise;
  noise.range_std = 0.03;
  noise.bearing_std = 0.002;
  noise.sigma_m = 0.02;
  noise.sigma_n = 0.05;
  const Pose T = exp_map((Vec6() << 0.2, -0.1, 0.05, 0.1, 0.05, 0.3)
                             .finished());
  const Vec3 p(4, 1, -0.5);
  const Vec3 q = T.apply(p) + Vec3(0.05, -0.03, 0.08);
  const Vec3 n = Vec3(0.2, 0.1, 1.0).normalized();

  const double predicted = residual_variance(p, q, n, T, noise);

  // Sample the three independent noise sources of the model.
  const double range = p.norm();
  const Vec3 u = p / range;
  Mat3 basis;  // u plus two lateral directions
  basis.col(0) = u;
  basis.col(1) = u.cross(Vec3::UnitZ()).normalized();
  basis.col(2) = u.cross(basis.col(1)).normalized();
  const Mat3 Pn = Mat3::Identity() - n * n.transpose();
  const Vec3 diff = T.apply(p) - q;

  const int N = 100000;
  double acc = 0.0, mean = 0.0;
  std::vector<double> rs(N);
  for (int i = 0; i < N; ++i) {
    const Vec3 dp = basis.col(0) * (noise.range_std * n01(rng)) +
                    basis.col(1) * (noise.bearing_std * range * n01(rng)) +
                    basis.col(2) * (noise.bearing_std * range * n01(rng));
    const Vec3 dq(noise.sigma_m * n01(rng), noise.sigma_m * n01(rng),
                  noise.sigma_m * n01(rng));
    const Vec3 dn = Pn * Vec3(noise.sigma_n * n01(rng),
                              noise.sigma_n * n01(rng),
                              noise.sigma_n * n01(rng));
    const double r = (n + dn).dot(T.apply(p + dp) - (q + dq)) - n.dot(diff);
    rs[i] = r;
    mean += r;
  }
  mean /= N;
  for (double r : rs) acc += (r - mean) * (r - mean);
  acc /= (N - 1);
  CHECK(acc == doctest::Approx(predicted).epsilon(0.05));
}

TEST_CASE("build_normal_equations basics and FD Jacobians") {
  NoiseConfig noise;
  Cloud plane = attributed_plane(2.0, 0.5);
  const auto pairs = identity_pairs(plane);

  Mat6 H;
  Vec6 b;
  build_normal_equations(pairs, plane, plane, Pose::Identity(), noise, H, b);
  CHECK(b.norm() < 1e-12);  // perfectly aligned: zero residuals
  CHECK((H - H.transpose()).norm() < 1e-12);

  // Single pair: rank 1.
  build_normal_equations({pairs[0]}, plane, plane, Pose::Identity(), noise, H,
                         b);
  Eigen::SelfAdjointEigenSolver<Mat6> es(H);
  int nonzero = 0;
  for (int i = 0; i < 6; ++i)
    if (es.eigenvalues()(i) > 1e-9 * es.eigenvalues().maxCoeff()) ++nonzero;
  CHECK(nonzero == 1);

  // Residual rows match central finite differences of
  // r(xi) = n^T (exp(xi) T p - q) at xi = 0.
  std::mt19937_64 rng(139);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const Vec3 q(u(rng), u(rng), u(rng));
    const Vec3 n = Vec3(u(rng), u(rng), 1.0 + std::abs(u(rng))).normalized();
    const Pose T = exp_map(random_tangent(rng, 0.3));

    Cloud sc, mp;
    Point ps, qs;
    ps.position = p;
    qs.position = q;
    qs.normal = n;
    sc.points = {ps};
    mp.points = {qs};
    Mat6 H1;
    Vec6 b1;
    build_normal_equations({{0, 0}}, sc, mp, T, noise, H1, b1);
    const double sigma2 = residual_variance(p, q, n, T, noise);

    // Recover the weighted row from H = w a a^T, b = -w a r.
    const double h = 1e-7;
    Vec6 a_fd;
    for (int j = 0; j < 6; ++j) {
      Vec6 d = Vec6::Zero();
      d(j) = h;
      const double rp = n.dot((exp_map(d) * T).apply(p) - q);
      const double rm = n.dot((exp_map(-d) * T).apply(p) - q);
      a_fd(j) = (rp - rm) / (2 * h);
    }
    const double r0 = n.dot(T.apply(p) - q);
    const Mat6 H_expect = a_fd * a_fd.transpose() / sigma2;
    const Vec6 b_expect = -a_fd * r0 / sigma2;
    CHECK((H1 - H_expect).norm() / std::max(1.0, H_expect.norm()) < 1e-6);
    CHECK((b1 - b_expect).norm() / std::max(1.0, b_expect.norm()) < 1e-6);
  }
}

TEST_CASE("compute_block_scaling formula and Schur identity") {
  double ell;
  Mat6 S;
  compute_block_scaling(Mat6::Identity(), ell, S);
  CHECK(ell == doctest::Approx(1.0));

  Mat6 H = Mat6::Identity();
  H.bottomRightCorner<3, 3>() *= 4.0;
  compute_block_scaling(H, ell, S);
  CHECK(ell == doctest::Approx(2.0));
  CHECK((S.topLeftCorner<3, 3>() - Mat3::Identity()).norm() < 1e-12);
  CHECK((S.bottomRightCorner<3, 3>() - 2.0 * Mat3::Identity()).norm() < 1e-9);

  // Schur marginal information equals the inverse of the marginal
  // covariance block of H^-1.
  std::mt19937_64 rng(149);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat6 Hs = random_spd(rng);
    const Mat6 P = Hs.inverse();
    const Mat3 It_marg = P.topLeftCorner<3, 3>().inverse();
    const Mat3 Ir_marg = P.bottomRightCorner<3, 3>().inverse();
    const Mat3 schur_t =
        Hs.topLeftCorner<3, 3>() -
        Hs.topRightCorner<3, 3>() *
            Hs.bottomRightCorner<3, 3>().inverse() *
            Hs.topRightCorner<3, 3>().transpose();
    const Mat3 schur_r =
        Hs.bottomRightCorner<3, 3>() -
        Hs.topRightCorner<3, 3>().transpose() *
            Hs.topLeftCorner<3, 3>().inverse() * Hs.topRightCorner<3, 3>();
    CHECK((schur_t - It_marg).norm() / It_marg.norm() < 1e-9);
    CHECK((schur_r - Ir_marg).norm() / Ir_marg.norm() < 1e-9);

    compute_block_scaling(Hs, ell, S);
    const double expect = std::sqrt(
        Eigen::SelfAdjointEigenSolver<Mat3>(schur_r).eigenvalues().maxCoeff() /
        Eigen::SelfAdjointEigenSolver<Mat3>(schur_t).eigenvalues().maxCoeff());
    CHECK(ell == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("detect_degeneracy ratio test") {
  DegeneracyConfig cfg;  // gamma 80

  const auto iso = detect_degeneracy(3.0 * Mat6::Identity(), cfg);
  CHECK(iso.num_degenerate() == 0);

  // Eigenvalues {80, ..., 80, 1}: the lone 1 is flagged (ratio exactly 80,
  // boundary is >=).
  Mat6 H = 80.0 * Mat6::Identity();
  H(5, 5) = 1.0;
  const auto edge = detect_degeneracy(H, cfg);
  CHECK(edge.num_degenerate() == 1);
  CHECK(edge.eigenvalues(0) == doctest::Approx(80.0));
  CHECK(edge.eigenvalues(5) == doctest::Approx(1.0));
  CHECK(edge.degenerate_mask[5]);
  CHECK(edge.lambda_thresh == doctest::Approx(1.0));

  // Descending order on a random SPD matrix.
  std::mt19937_64 rng(151);
  const auto rep = detect_degeneracy(random_spd(rng), cfg);
  for (int i = 1; i < 6; ++i)
    CHECK(rep.eigenvalues(i - 1) >= rep.eigenvalues(i));
}

TEST_CASE("degeneracy mask is invariant to uniform weight scaling") {
  std::mt19937_64 rng(157);
  DegeneracyConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    Mat6 H = random_spd(rng, 0.001);
    H(5, 5) *= 1e-4;  // make some directions weak
    const auto a = detect_degeneracy(H, cfg);
    const auto b = detect_degeneracy(1234.5 * H, cfg);
    CHECK(a.degenerate_mask == b.degenerate_mask);
  }
}

TEST_CASE("plane scene: exactly 3 degenerate directions, null space clean") {
  // Analytic construction: point-to-plane rows on z = 0 give information
  // only in z translation, roll and pitch; x, y and yaw are null.
  NoiseConfig noise;
  Cloud plane = attributed_plane(4.0, 0.25);
  Mat6 H;
  Vec6 b;
  build_normal_equations(identity_pairs(plane), plane, plane,
                         Pose::Identity(), noise, H, b);
  double ell;
  Mat6 S;
  compute_block_scaling(H, ell, S);
  const Mat6 H_scaled = S.inverse().transpose() * H * S.inverse();
  DegeneracyConfig cfg;  // gamma 80
  const auto rep = detect_degeneracy(0.5 * (H_scaled + H_scaled.transpose()),
                                     cfg);
  CHECK(rep.num_degenerate() == 3);

  // Offset the pose along the analytic null space (x, y, yaw) plus a z
  // error; the remapped update must not touch the null directions.
  Vec6 offset = Vec6::Zero();
  offset(0) = 0.1;   // x
  offset(1) = -0.15; // y
  offset(2) = 0.2;   // z (observable)
  offset(5) = 0.05;  // yaw
  Pose T_bar = exp_map(offset);
  Mat6 H2;
  Vec6 b2;
  build_normal_equations(identity_pairs(plane), plane, plane, T_bar, noise,
                         H2, b2);
  double ell2;
  Mat6 S2;
  compute_block_scaling(H2, ell2, S2);
  const Mat6 H2s = (S2.inverse().transpose() * H2 * S2.inverse()).eval();
  const auto rep2 = detect_degeneracy(0.5 * (H2s + H2s.transpose()), cfg);
  Pose T_new = T_bar;
  const Vec6 update = solve_remapped(H2, b2, S2, rep2, T_new);
  CHECK(std::abs(update(0)) < 1e-9);  // in-plane translations untouched
  CHECK(std::abs(update(1)) < 1e-9);
  CHECK(std::abs(update(5)) < 1e-9);  // yaw untouched
  CHECK(update(2) == doctest::Approx(-0.2).epsilon(1e-6));  // z corrected

  // The scaled update lies in span(V_c): no component along V_d.
  const Vec6 scaled_update = S2 * update;
  for (int i = 0; i < 6; ++i) {
    if (!rep2.degenerate_mask[i]) continue;
    CHECK(std::abs(rep2.eigenvectors.col(i).dot(scaled_update)) < 1e-9);
  }
}

TEST_CASE("solve_remapped equals plain GN when nothing is degenerate") {
  std::mt19937_64 rng(163);
  DegeneracyConfig cfg;
  int agreeing = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Mat6 H = random_spd(rng);
    const Vec6 b = random_tangent(rng, 1.0);
    double ell;
    Mat6 S;
    compute_block_scaling(H, ell, S);
    // Force a spread of scalings to exercise the change of variables.
    if (trial % 3 == 1) {
      S.bottomRightCorner<3, 3>() = 17.0 * Mat3::Identity();
    }
    const Mat6 Hs = (S.inverse().transpose() * H * S.inverse()).eval();
    const auto rep = detect_degeneracy(0.5 * (Hs + Hs.transpose()), cfg);
    if (rep.num_degenerate() != 0) continue;  // random SPD: rarely flagged
    Pose T = Pose::Identity();
    const Vec6 update = solve_remapped(H, b, S, rep, T);
    const Vec6 direct = H.ldlt().solve(b);
    CHECK((update - direct).norm() / direct.norm() < 1e-9);
    ++agreeing;
  }
  // Forced scalings push some systems past gamma; most remain unflagged
  // and every unflagged one must satisfy the identity.
  CHECK(agreeing >= 60);
}

TEST_CASE("solve_remapped with everything degenerate does nothing") {
  DegeneracyConfig cfg;
  Mat6 H = 1e-9 * Mat6::Identity();
  DegeneracyReport rep;
  rep.eigenvalues = Vec6::Constant(1e-9);
  rep.eigenvectors = Mat6::Identity();
  rep.degenerate_mask = {true, true, true, true, true, true};
  Pose T = exp_map((Vec6() << 0.3, 0, 0, 0, 0, 0.1).finished());
  const Pose T_before = T;
  const Vec6 update =
      solve_remapped(H, Vec6::Ones(), Mat6::Identity(), rep, T);
  CHECK(update.norm() < 1e-12);
  CHECK(log_map(T * T_before.inverse()).norm() < 1e-12);
}

TEST_CASE("remapped_covariance spectra") {
  DegeneracyConfig cfg;
  const double eps = cfg.epsilon;

  // No degenerate directions: P equals the inverse of the scaled Hessian
  // mapped back, here with S = I so P = H^-1.
  std::mt19937_64 rng(167);
  const Mat6 H = random_spd(rng);
  Eigen::SelfAdjointEigenSolver<Mat6> es(H);
  DegeneracyReport rep;
  // detect_degeneracy orders descending; mirror that here.
  for (int i = 0; i < 6; ++i) {
    rep.eigenvalues(i) = es.eigenvalues()(5 - i);
    rep.eigenvectors.col(i) = es.eigenvectors().col(5 - i);
    rep.degenerate_mask[i] = false;
  }
  const Mat6 P = remapped_covariance(rep, Mat6::Identity(), eps);
  CHECK((P - H.inverse()).norm() / H.inverse().norm() < 1e-9);

  // Fully degenerate with S = I: (1/eps) I.
  DegeneracyReport all;
  all.eigenvalues = Vec6::Constant(1e-12);
  all.eigenvectors = Mat6::Identity();
  all.degenerate_mask = {true, true, true, true, true, true};
  const Mat6 Pd = remapped_covariance(all, Mat6::Identity(), eps);
  CHECK((Pd - (1.0 / eps) * Mat6::Identity()).norm() * eps < 1e-9);

  // Mixed case: spectrum is exactly {1/lambda_c ..., 1/eps ...}.
  DegeneracyReport mix = rep;
  mix.degenerate_mask[4] = true;
  mix.degenerate_mask[5] = true;
  const Mat6 Pm = remapped_covariance(mix, Mat6::Identity(), eps);
  Eigen::SelfAdjointEigenSolver<Mat6> esm(Pm);
  std::vector<double> expect;
  for (int i = 0; i < 6; ++i)
    expect.push_back(mix.degenerate_mask[i] ? 1.0 / eps
                                            : 1.0 / mix.eigenvalues(i));
  std::sort(expect.begin(), expect.end());
  for (int i = 0; i < 6; ++i)
    CHECK(esm.eigenvalues()(i) ==
          doctest::Approx(expect[i]).epsilon(1e-6));
}

TEST_CASE("block-scaling neutrality on 100 random SPD systems") {
  // Change-of-variables identity: with no flagged directions the
  // remapped-and-unscaled solution equals the direct solve for any ell.
  std::mt19937_64 rng(173);
  std::uniform_real_distribution<double> ue(0.1, 50.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat6 H = random_spd(rng);
    const Vec6 b = random_tangent(rng, 1.0);
    Mat6 S = Mat6::Identity();
    S.bottomRightCorner<3, 3>() *= ue(rng);
    const Mat6 Hs = (S.inverse().transpose() * H * S.inverse()).eval();
    Eigen::SelfAdjointEigenSolver<Mat6> es(0.5 * (Hs + Hs.transpose()));
    DegeneracyReport rep;
    for (int i = 0; i < 6; ++i) {
      rep.eigenvalues(i) = es.eigenvalues()(5 - i);
      rep.eigenvectors.col(i) = es.eigenvectors().col(5 - i);
      rep.degenerate_mask[i] = false;
    }
    Pose T = Pose::Identity();
    const Vec6 update = solve_remapped(H, b, S, rep, T);
    const Vec6 direct = H.ldlt().solve(b);
    CHECK((update - direct).norm() / direct.norm() < 1e-9);
  }
}

TEST_CASE("localize: scan = submap with identity prior is a fixed point") {
  Cloud submap = feature_rich_cloud();
  PoseWithCovariance prior;
  prior.pose = Pose::Identity();
  prior.covariance = 0.01 * Mat6::Identity();

  AssociationConfig assoc;
  NoiseConfig noise;
  DegeneracyConfig degen;
  FusionConfig fusion;
  const auto res = localize(submap, submap, prior, Pose::Identity(),
                            Pose::Identity(), assoc, noise, degen, fusion);
  CHECK(res.accepted);
  CHECK(log_map(res.pose).norm() < degen.convergence_tol * 10);
  CHECK(log_map(res.fused_T_km.pose).norm() < 1e-3);
}

TEST_CASE("localize recovers a 0.2 m offset within 1e-3") {
  // The scan is an exact rigid copy of the submap, so the oracle isolates
  // the solver from sampling-induced association bias.
  Cloud submap = feature_rich_cloud();
  Vec6 xi = Vec6::Zero();
  xi(0) = 0.2;
  const Pose T_ms_true = exp_map(xi);
  const Cloud scan = transform_cloud(submap, T_ms_true.inverse());

  PoseWithCovariance prior;  // loose prior at identity
  prior.pose = Pose::Identity();
  prior.covariance = 0.1 * Mat6::Identity();

  AssociationConfig assoc;
  NoiseConfig noise;
  DegeneracyConfig degen;
  FusionConfig fusion;
  const auto res = localize(scan, submap, prior, Pose::Identity(),
                            Pose::Identity(), assoc, noise, degen, fusion);
  CHECK(res.accepted);
  CHECK((res.pose.translation - T_ms_true.translation).norm() < 1e-3);
  CHECK(log_map(res.pose * T_ms_true.inverse()).norm() < 2e-3);
}

TEST_CASE("localize on a flat plane leaves in-plane prior untouched") {
  // Degenerate scene: the fused pose must keep the prior's in-plane
  // components (they carry infinite ICP variance) while the observable z
  // is free to move.
  Cloud submap = attributed_plane(5.0, 0.2);
  Cloud scan = submap;

  Vec6 xi = Vec6::Zero();
  xi(0) = 0.2;  // in-plane x offset in the prior
  PoseWithCovariance prior;
  prior.pose = exp_map(xi);  // T_{k,m}; T_init_ms = prior^-1 here
  prior.covariance = 1e-4 * Mat6::Identity();

  AssociationConfig assoc;
  NoiseConfig noise;
  DegeneracyConfig degen;
  FusionConfig fusion;
  const auto res = localize(scan, submap, prior, Pose::Identity(),
                            Pose::Identity(), assoc, noise, degen, fusion);
  CHECK(res.report.num_degenerate() >= 3);
  // Fused estimate keeps the prior's in-plane translation.
  CHECK(res.fused_T_km.pose.translation.x() ==
        doctest::Approx(0.2).epsilon(0.01));
  CHECK(std::abs(res.fused_T_km.pose.translation.z()) < 5e-3);
}

TEST_CASE("localize falls back to the prior with too few pairs") {
  Cloud submap = attributed_plane(0.4, 0.2);  // tiny map
  Cloud scan;
  Point p;
  p.position = Vec3(50, 50, 50);  // nowhere near the map
  p.normal = Vec3(0, 0, 1);
  p.curvature = 0.0;
  scan.points = {p};

  PoseWithCovariance prior;
  prior.pose = exp_map((Vec6() << 0.1, 0, 0, 0, 0, 0).finished());
  prior.covariance = 0.01 * Mat6::Identity();
  AssociationConfig assoc;
  NoiseConfig noise;
  DegeneracyConfig degen;
  FusionConfig fusion;
  const auto res = localize(scan, submap, prior, Pose::Identity(),
                            Pose::Identity(), assoc, noise, degen, fusion);
  CHECK_FALSE(res.accepted);
  CHECK(log_map(res.fused_T_km.pose * prior.pose.inverse()).norm() < 1e-12);
}

TEST_CASE("reject_outlier gates") {
  CHECK(reject_outlier(Pose::Identity(), Pose::Identity(), 0.5, 0.2));

  Pose far;
  far.translation = Vec3(1.0, 0, 0);  // 2x the 0.5 m gate
  CHECK_FALSE(reject_outlier(far, Pose::Identity(), 0.5, 0.2));

  // Exactly at the gate: accepted (<= convention).
  Vec6 xi = Vec6::Zero();
  xi(5) = 0.2;
  const Pose at_gate = exp_map(xi);
  CHECK(reject_outlier(at_gate, Pose::Identity(), 0.5,
                       rotation_angle(at_gate)));
}
