#include "dltr/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace dltr {

std::vector<PathSample> build_path(const std::vector<Vec3>& positions,
                                   const std::vector<double>& times,
                                   double min_speed) {
  const std::size_t n = std::min(positions.size(), times.size());
  if (n < 2) return {};

  auto speed_at = [&](std::size_t i) {
    const std::size_t j = std::min(i + 1, n - 1);
    const std::size_t h = j > 0 ? j - 1 : 0;
    const double dt = times[j] - times[h];
    return dt > 0.0 ? (positions[j] - positions[h]).norm() / dt : 0.0;
  };

  std::size_t begin = 0;
  while (begin + 1 < n && speed_at(begin) < min_speed) ++begin;
  std::size_t end = n;
  while (end > begin + 1 && speed_at(end - 1) < min_speed) --end;

  std::vector<PathSample> out;
  for (std::size_t i = begin; i < end; ++i) {
    if (!out.empty() && (positions[i] - out.back().position).norm() < 1e-12) {
      continue;  // duplicate sample
    }
    PathSample s;
    s.position = positions[i];
    s.arclength = out.empty() ? 0.0
                              : out.back().arclength +
                                    (positions[i] - out.back().position).norm();
    out.push_back(s);
  }
  if (out.size() < 2) return {};
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t j = std::min(i + 1, out.size() - 1);
    const std::size_t h = j > 0 ? j - 1 : 0;
    const Vec3 d = out[j].position - out[h].position;
    out[i].tangent = d.norm() > 0.0 ? d.normalized() : Vec3::UnitX();
  }
  return out;
}

namespace {

Vec3 position_at_arclength(const std::vector<PathSample>& path, double s) {
  if (s <= path.front().arclength) return path.front().position;
  if (s >= path.back().arclength) return path.back().position;
  for (std::size_t i = 1; i < path.size(); ++i) {
    if (s <= path[i].arclength) {
      const double span = path[i].arclength - path[i - 1].arclength;
      const double t = span > 0.0 ? (s - path[i - 1].arclength) / span : 0.0;
      return path[i - 1].position +
             t * (path[i].position - path[i - 1].position);
    }
  }
  return path.back().position;
}

}  // namespace

std::optional<std::vector<double>> lateral_errors(
    const std::vector<PathSample>& teach,
    const std::vector<PathSample>& repeat) {
  if (teach.size() < 2 || repeat.size() < 2) return std::nullopt;
  const double lo = std::max(teach.front().arclength, repeat.front().arclength);
  const double hi = std::min(teach.back().arclength, repeat.back().arclength);
  if (hi <= lo) return std::nullopt;

  std::vector<double> errors;
  errors.reserve(teach.size());
  for (const auto& sample : teach) {
    const Vec3 p_rep = position_at_arclength(repeat, sample.arclength);
    Vec3 normal = Vec3::UnitZ().cross(sample.tangent);
    const double nn = normal.norm();
    if (nn < 1e-9) {
      errors.push_back(0.0);  // vertical tangent: lateral undefined in-plane
      continue;
    }
    normal /= nn;
    errors.push_back((p_rep - sample.position).dot(normal));
  }
  return errors;
}

std::vector<double> self_reported_lateral(const TrGraph& graph, int* skipped) {
  std::vector<double> out;
  int skip = 0;
  for (const auto& v : graph.repeat) {
    if (!v.spatial_edge) {
      ++skip;
      continue;
    }
    // Position of the repeat vertex origin in the teach vertex frame.
    out.push_back(v.spatial_edge->T_vm.inverse().translation.y());
  }
  if (skipped) *skipped = skip;
  return out;
}

double rmse(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double acc = 0.0;
  for (double v : values) acc += v * v;
  return std::sqrt(acc / static_cast<double>(values.size()));
}

double max_abs(const std::vector<double>& values) {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

MetricsReport compute_metrics(const RunRecord& record) {
  MetricsReport report;
  report.completed = record.completed;

  std::vector<Vec3> tp, rp;
  std::vector<double> tt, rt;
  for (const auto& f : record.teach_frames) {
    tp.push_back(f.gt_position);
    tt.push_back(f.time);
  }
  for (const auto& f : record.repeat_frames) {
    rp.push_back(f.gt_position);
    rt.push_back(f.time);
  }
  const auto teach = build_path(tp, tt);
  const auto repeat = build_path(rp, rt);
  if (const auto errs = lateral_errors(teach, repeat)) {
    report.lateral_rmse_measured = rmse(*errs);
    report.max_lateral_measured = max_abs(*errs);
  }
  const auto self = self_reported_lateral(record.graph);
  report.lateral_rmse_self = rmse(self);
  report.max_lateral_self = max_abs(self);
  return report;
}

}  // namespace dltr
