#pragma once

// Path-following metrics: measured lateral error (groundtruth repeat vs
// groundtruth teach, aligned by arclength) and the self-reported lateral
// offset read out of the pose graph's spatial edges.

#include <optional>
#include <vector>

#include "dltr/pipeline.hpp"
#include "dltr/tr_graph.hpp"

namespace dltr {

struct PathSample {
  double arclength = 0.0;
  Vec3 position = Vec3::Zero();
  Vec3 tangent = Vec3::UnitX();
};

/// Builds an arclength-parameterized path from timed positions, trimming
/// stationary head/tail segments (speed < min_speed). Consecutive
/// duplicate positions are dropped.
std::vector<PathSample> build_path(const std::vector<Vec3>& positions,
                                   const std::vector<double>& times,
                                   double min_speed = 0.05);

/// Signed orthogonal offsets of the repeat path at each teach arclength
/// (repeat interpolated linearly between samples; sign from z x tangent).
/// nullopt when the arclength ranges do not overlap or either path is
/// degenerate.
std::optional<std::vector<double>> lateral_errors(
    const std::vector<PathSample>& teach,
    const std::vector<PathSample>& repeat);

/// Per repeat vertex with a spatial edge, the lateral (y) component of the
/// vertex origin expressed in its matched teach vertex frame. Vertices
/// without a spatial edge are skipped and counted.
std::vector<double> self_reported_lateral(const TrGraph& graph,
                                          int* skipped = nullptr);

struct MetricsReport {
  double lateral_rmse_measured = 0.0;
  double lateral_rmse_self = 0.0;
  double max_lateral_measured = 0.0;
  double max_lateral_self = 0.0;
  bool completed = false;
};

double rmse(const std::vector<double>& values);
double max_abs(const std::vector<double>& values);

/// Both metrics from a recorded run (groundtruth teach/repeat frames and
/// the stored pose graph).
MetricsReport compute_metrics(const RunRecord& record);

}  // namespace dltr
