#pragma once

// Teach-and-Repeat pose graph. The teach pass produces a chain of vertices
// with submaps; the repeat pass produces a second chain whose vertices may
// carry spatial edges into the teach chain. Edge poses are stored as
// T_{v_i, v_{i-1}} (previous-vertex coordinates into the current vertex
// frame) with left-perturbation covariances.

#include <optional>
#include <string>
#include <vector>

#include "dltr/cloud.hpp"
#include "dltr/lie.hpp"
#include "dltr/odometry.hpp"

namespace dltr {

struct SpatialEdge {
  int teach_vertex = -1;
  Pose T_vm;  // teach submap frame m' -> repeat vertex frame v'
  Mat6 covariance = Mat6::Zero();
};

struct Vertex {
  int id = 0;
  Pose pose_from_prev;                    // T_{v, v-1}
  Mat6 edge_covariance = Mat6::Zero();
  std::optional<Cloud> submap;            // teach vertices only
  std::optional<SpatialEdge> spatial_edge;  // repeat vertices only
};

struct MapConfig {
  double translation_threshold = 2.0;  // m
  double rotation_threshold = 0.3;     // rad
  int frames_per_submap = 5;
};

struct TrGraph {
  std::vector<Vertex> teach;
  std::vector<Vertex> repeat;
};

/// True iff the offset exceeds either threshold (strict inequality).
bool maybe_create_vertex(const Pose& current_offset, const MapConfig& config);

/// Transforms each frame into the vertex frame, concatenates, downsamples
/// the union at fine_voxel and recomputes normals/curvatures there.
/// Poses are T_{vertex, frame}. Throws on empty input.
Cloud accumulate_submap(
    const std::vector<std::pair<Cloud, Pose>>& frames,
    const CurvatureConfig& config);

/// Composes a chain of edges left to right; covariance transported by the
/// adjoint of the accumulated pose at each step.
PoseWithCovariance compose_chain(
    const std::vector<std::pair<Pose, Mat6>>& edges);

/// Pose and covariance of edge inversion under left perturbations.
std::pair<Pose, Mat6> invert_edge(const Pose& pose, const Mat6& cov);

/// Relative pose T_{to, from} along the teach chain with compounded
/// covariance. Throws when either id is out of range.
PoseWithCovariance teach_chain_transform(const TrGraph& graph, int from_id,
                                         int to_id);

/// Localization prior: compounds the odometry offset T_{k,v} through the
/// repeat chain, the most recent spatial edge, and the teach chain to the
/// target teach vertex, yielding T_{k,m} with covariance.
PoseWithCovariance compound_prior(const TrGraph& graph, int current_vertex,
                                  int target_teach_vertex,
                                  const PoseWithCovariance& odometry_offset);

/// Nearest teach vertex to the prior position, ties broken by lower id.
/// The prior maps teach-root coordinates; selection is by translation
/// distance of each teach vertex (in root frame) to the prior position.
int select_target_teach_vertex(const TrGraph& graph,
                               const Vec3& position_in_teach_root);

/// Directory persistence: graph.json index plus one cloud CSV per submap.
void save_graph(const TrGraph& graph, const std::string& dir);
TrGraph load_graph(const std::string& dir);

}  // namespace dltr
