#include "dltr/tr_graph.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace dltr {

bool maybe_create_vertex(const Pose& current_offset, const MapConfig& config) {
  return current_offset.translation.norm() > config.translation_threshold ||
         rotation_angle(current_offset) > config.rotation_threshold;
}

Cloud accumulate_submap(const std::vector<std::pair<Cloud, Pose>>& frames,
                        const CurvatureConfig& config) {
  if (frames.empty()) throw std::invalid_argument("accumulate_submap: no frames");
  Cloud merged;
  merged.frame_id = "vertex";
  Vec3 origin_sum = Vec3::Zero();
  for (const auto& [cloud, pose] : frames) {
    const Cloud transformed = transform_cloud(cloud, pose);
    origin_sum += transformed.sensor_origin;
    merged.points.insert(merged.points.end(), transformed.points.begin(),
                         transformed.points.end());
  }
  merged.sensor_origin = origin_sum / static_cast<double>(frames.size());
  Cloud down = downsample_uniform(merged, config.fine_voxel);
  for (auto& p : down.points) {
    p.normal.reset();
    p.curvature.reset();
  }
  compute_normals_and_curvatures(down, config);
  return down;
}

PoseWithCovariance compose_chain(
    const std::vector<std::pair<Pose, Mat6>>& edges) {
  PoseWithCovariance out;
  out.pose = Pose::Identity();
  out.covariance = Mat6::Zero();
  for (const auto& [pose, cov] : edges) {
    const Mat6 Ad = adjoint(out.pose);
    out.covariance += Ad * cov * Ad.transpose();
    out.pose = out.pose * pose;
  }
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

std::pair<Pose, Mat6> invert_edge(const Pose& pose, const Mat6& cov) {
  const Pose inv = pose.inverse();
  const Mat6 Ad = adjoint(inv);
  return {inv, Ad * cov * Ad.transpose()};
}

PoseWithCovariance teach_chain_transform(const TrGraph& graph, int from_id,
                                         int to_id) {
  const int n = static_cast<int>(graph.teach.size());
  if (from_id < 0 || from_id >= n || to_id < 0 || to_id >= n) {
    throw std::out_of_range("teach_chain_transform: vertex id out of range");
  }
  std::vector<std::pair<Pose, Mat6>> edges;
  if (to_id >= from_id) {
    // T_{to,from} = E_to * ... * E_{from+1}
    for (int i = to_id; i > from_id; --i) {
      edges.emplace_back(graph.teach[i].pose_from_prev,
                         graph.teach[i].edge_covariance);
    }
  } else {
    for (int i = to_id + 1; i <= from_id; ++i) {
      edges.push_back(invert_edge(graph.teach[i].pose_from_prev,
                                  graph.teach[i].edge_covariance));
    }
  }
  return compose_chain(edges);
}

PoseWithCovariance compound_prior(const TrGraph& graph, int current_vertex,
                                  int target_teach_vertex,
                                  const PoseWithCovariance& odometry_offset) {
  if (current_vertex < 0 ||
      current_vertex >= static_cast<int>(graph.repeat.size())) {
    throw std::out_of_range("compound_prior: repeat vertex out of range");
  }
  // Most recent repeat vertex at or before current with a spatial edge.
  int anchor = -1;
  for (int i = current_vertex; i >= 0; --i) {
    if (graph.repeat[i].spatial_edge) {
      anchor = i;
      break;
    }
  }
  if (anchor < 0) {
    throw std::runtime_error("compound_prior: no spatial edge to teach graph");
  }
  const SpatialEdge& se = *graph.repeat[anchor].spatial_edge;

  std::vector<std::pair<Pose, Mat6>> edges;
  edges.emplace_back(odometry_offset.pose, odometry_offset.covariance);
  // T_{v,v'} = E_v E_{v-1} ... E_{a+1} with E_i = T_{v_i, v_{i-1}}.
  for (int i = current_vertex; i > anchor; --i) {
    edges.emplace_back(graph.repeat[i].pose_from_prev,
                       graph.repeat[i].edge_covariance);
  }
  edges.emplace_back(se.T_vm, se.covariance);
  const PoseWithCovariance teach_leg =
      teach_chain_transform(graph, target_teach_vertex, se.teach_vertex);
  // teach_leg is T_{m', m}.
  edges.emplace_back(teach_leg.pose, teach_leg.covariance);

  PoseWithCovariance out = compose_chain(edges);
  out.time = odometry_offset.time;
  return out;
}

namespace {

Vec3 teach_vertex_position_in_root(const TrGraph& graph, int id) {
  Pose T_v_root = Pose::Identity();  // T_{v_i, v_0}
  for (int i = 1; i <= id; ++i) {
    T_v_root = graph.teach[i].pose_from_prev * T_v_root;
  }
  return T_v_root.inverse().translation;
}

}  // namespace

int select_target_teach_vertex(const TrGraph& graph,
                               const Vec3& position_in_teach_root) {
  int best = -1;
  double best_d2 = 0.0;
  Pose T_v_root = Pose::Identity();
  for (int i = 0; i < static_cast<int>(graph.teach.size()); ++i) {
    if (i > 0) T_v_root = graph.teach[i].pose_from_prev * T_v_root;
    const double d2 =
        (T_v_root.inverse().translation - position_in_teach_root).squaredNorm();
    if (best < 0 || d2 < best_d2) {
      best = i;
      best_d2 = d2;
    }
  }
  return best;
}

namespace {

using nlohmann::json;

json pose_to_json(const Pose& p) {
  json arr = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) arr.push_back(p.rotation(r, c));
    arr.push_back(p.translation(r));
  }
  return arr;  // 12 row-major floats of the 3x4 transform
}

Pose pose_from_json(const json& arr) {
  Pose p;
  int k = 0;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = arr[k++];
    p.translation(r) = arr[k++];
  }
  return p;
}

json cov_to_json(const Mat6& m) {
  json arr = json::array();
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) arr.push_back(m(r, c));
  return arr;
}

Mat6 cov_from_json(const json& arr) {
  Mat6 m;
  int k = 0;
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) m(r, c) = arr[k++];
  return m;
}

json vertex_to_json(const Vertex& v, const std::string& dir,
                    const std::string& prefix) {
  json j;
  j["id"] = v.id;
  j["pose_from_prev"] = pose_to_json(v.pose_from_prev);
  j["edge_covariance"] = cov_to_json(v.edge_covariance);
  if (v.submap) {
    const std::string name = prefix + "_submap_" + std::to_string(v.id) + ".csv";
    save_cloud_csv(*v.submap, dir + "/" + name);
    j["submap"] = name;
  }
  if (v.spatial_edge) {
    json se;
    se["teach_vertex"] = v.spatial_edge->teach_vertex;
    se["pose"] = pose_to_json(v.spatial_edge->T_vm);
    se["covariance"] = cov_to_json(v.spatial_edge->covariance);
    j["spatial_edge"] = se;
  }
  return j;
}

Vertex vertex_from_json(const json& j, const std::string& dir) {
  Vertex v;
  v.id = j["id"];
  v.pose_from_prev = pose_from_json(j["pose_from_prev"]);
  v.edge_covariance = cov_from_json(j["edge_covariance"]);
  if (j.contains("submap")) {
    v.submap = load_cloud_csv(dir + "/" + j["submap"].get<std::string>());
  }
  if (j.contains("spatial_edge")) {
    SpatialEdge se;
    se.teach_vertex = j["spatial_edge"]["teach_vertex"];
    se.T_vm = pose_from_json(j["spatial_edge"]["pose"]);
    se.covariance = cov_from_json(j["spatial_edge"]["covariance"]);
    v.spatial_edge = se;
  }
  return v;
}

}  // namespace

void save_graph(const TrGraph& graph, const std::string& dir) {
  std::filesystem::create_directories(dir);
  json j;
  j["teach"] = json::array();
  j["repeat"] = json::array();
  for (const auto& v : graph.teach) {
    j["teach"].push_back(vertex_to_json(v, dir, "teach"));
  }
  for (const auto& v : graph.repeat) {
    j["repeat"].push_back(vertex_to_json(v, dir, "repeat"));
  }
  std::ofstream f(dir + "/graph.json");
  if (!f) throw std::runtime_error("save_graph: cannot open " + dir);
  f << j.dump(1);
}

TrGraph load_graph(const std::string& dir) {
  std::ifstream f(dir + "/graph.json");
  if (!f) throw std::runtime_error("load_graph: cannot open " + dir);
  json j;
  f >> j;
  TrGraph graph;
  for (const auto& vj : j["teach"]) graph.teach.push_back(vertex_from_json(vj, dir));
  for (const auto& vj : j["repeat"]) graph.repeat.push_back(vertex_from_json(vj, dir));
  return graph;
}

}  // namespace dltr
