#include "dltr/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace dltr {

namespace {
constexpr int kLeafSize = 16;
}

KdTree::KdTree(const Cloud& cloud) {
  std::vector<Vec3> pts;
  pts.reserve(cloud.size());
  for (const auto& p : cloud.points) pts.push_back(p.position);
  build(pts);
}

void KdTree::build(const std::vector<Vec3>& pts) {
  points_ = pts;
  indices_.resize(pts.size());
  std::iota(indices_.begin(), indices_.end(), 0);
  nodes_.clear();
  nodes_.reserve(2 * pts.size() / kLeafSize + 4);
  root_ = pts.empty() ? -1 : build_recursive(0, static_cast<int>(pts.size()), 0);
}

int KdTree::build_recursive(int begin, int end, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  if (end - begin <= kLeafSize) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  // Split on the widest axis of the bucket.
  Vec3 lo = points_[indices_[begin]], hi = lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[indices_[i]]);
    hi = hi.cwiseMax(points_[indices_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(indices_.begin() + begin, indices_.begin() + mid,
                   indices_.begin() + end, [&](int a, int b) {
                     return points_[a][axis] < points_[b][axis];
                   });
  nodes_[id].axis = axis;
  nodes_[id].split = points_[indices_[mid]][axis];
  const int left = build_recursive(begin, mid, depth + 1);
  const int right = build_recursive(mid, end, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::knn_recursive(int node, const Vec3& q, int k,
                           std::vector<std::pair<double, int>>& heap) const {
  const Node& n = nodes_[node];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const int idx = indices_[i];
      const double d2 = (points_[idx] - q).squaredNorm();
      if (static_cast<int>(heap.size()) < k) {
        heap.emplace_back(d2, idx);
        std::push_heap(heap.begin(), heap.end());
      } else if (d2 < heap.front().first) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = {d2, idx};
        std::push_heap(heap.begin(), heap.end());
      }
    }
    return;
  }
  const double delta = q[n.axis] - n.split;
  const int near = delta <= 0.0 ? n.left : n.right;
  const int far = delta <= 0.0 ? n.right : n.left;
  knn_recursive(near, q, k, heap);
  if (static_cast<int>(heap.size()) < k || delta * delta < heap.front().first) {
    knn_recursive(far, q, k, heap);
  }
}

std::vector<std::pair<int, double>> KdTree::knn(const Vec3& query,
                                                int k) const {
  std::vector<std::pair<int, double>> out;
  if (root_ < 0 || k < 1) return out;
  std::vector<std::pair<double, int>> heap;  // max-heap on squared distance
  heap.reserve(k + 1);
  knn_recursive(root_, query, k, heap);
  std::sort_heap(heap.begin(), heap.end());
  out.reserve(heap.size());
  for (const auto& [d2, idx] : heap) out.emplace_back(idx, std::sqrt(d2));
  return out;
}

void KdTree::radius_recursive(int node, const Vec3& q, double r2,
                              std::vector<int>& out) const {
  const Node& n = nodes_[node];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const int idx = indices_[i];
      if ((points_[idx] - q).squaredNorm() <= r2) out.push_back(idx);
    }
    return;
  }
  const double delta = q[n.axis] - n.split;
  if (delta <= 0.0 || delta * delta <= r2) radius_recursive(n.left, q, r2, out);
  if (delta > 0.0 || delta * delta <= r2) radius_recursive(n.right, q, r2, out);
}

std::vector<int> KdTree::radius(const Vec3& query, double r) const {
  std::vector<int> out;
  if (root_ < 0) return out;
  radius_recursive(root_, query, r * r, out);
  return out;
}

std::vector<std::pair<int, double>> knn_search(const Cloud& cloud,
                                               const Vec3& query, int k) {
  if (cloud.empty()) return {};
  KdTree tree(cloud);
  return tree.knn(query, k);
}

Vec3 estimate_normal(const Cloud& cloud, const KdTree& index, int point_index,
                     int k) {
  const Vec3& q = cloud.points[point_index].position;
  const auto nbrs = index.knn(q, k);
  Vec3 mean = Vec3::Zero();
  for (const auto& [idx, d] : nbrs) mean += cloud.points[idx].position;
  mean /= static_cast<double>(nbrs.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& [idx, d] : nbrs) {
    const Vec3 r = cloud.points[idx].position - mean;
    cov += r * r.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  const Vec3 evals = es.eigenvalues();  // ascending
  if (evals(1) < 1e-12 * std::max(evals(2), 1.0)) {
    throw std::runtime_error("estimate_normal: degenerate neighbourhood");
  }
  Vec3 n = es.eigenvectors().col(0);
  if (n.dot(cloud.sensor_origin - q) < 0.0) n = -n;
  return n;
}

double compute_curvature(const Cloud& cloud, const KdTree& index,
                         int point_index, const CurvatureConfig& config,
                         int* singular_fits) {
  const Point& p = cloud.points[point_index];
  Vec3 n;
  if (p.normal) {
    n = *p.normal;
  } else {
    n = estimate_normal(cloud, index, point_index, config.knn_k);
  }
  // Local tangent frame at the query point.
  Vec3 u = n.unitOrthogonal();
  Vec3 v = n.cross(u);

  const auto nbrs = index.knn(p.position, std::max(config.knn_k, 6));
  const int m = static_cast<int>(nbrs.size());
  Eigen::MatrixXd A(m, 6);
  Eigen::VectorXd z(m);
  for (int i = 0; i < m; ++i) {
    const Vec3 r = cloud.points[nbrs[i].first].position - p.position;
    const double x = r.dot(u);
    const double y = r.dot(v);
    A.row(i) << x * x, x * y, y * y, x, y, 1.0;
    z(i) = r.dot(n);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU |
                                               Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv(sv.size() - 1) <= 0.0 || sv(0) / sv(sv.size() - 1) > 1e12) {
    if (singular_fits) ++(*singular_fits);
    return 0.0;  // no exploitable structure; treat as flat
  }
  const Eigen::Matrix<double, 6, 1> c = svd.solve(z);
  const double a = c(0), b = c(1), cc = c(2), d = c(3), e = c(4);
  // Fundamental forms at the fit origin: z_u = d, z_v = e,
  // z_uu = 2a, z_uv = b, z_vv = 2c.
  const double E = 1.0 + d * d;
  const double F = d * e;
  const double G = 1.0 + e * e;
  const double w = std::sqrt(1.0 + d * d + e * e);
  const double L = 2.0 * a / w;
  const double M = b / w;
  const double N = 2.0 * cc / w;
  return (L * N - M * M) / (E * G - F * F);
}

void compute_normals_and_curvatures(Cloud& cloud, const CurvatureConfig& config,
                                    int* singular_fits) {
  if (cloud.empty()) return;
  KdTree index(cloud);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    try {
      cloud.points[i].normal =
          estimate_normal(cloud, index, static_cast<int>(i), config.knn_k);
    } catch (const std::runtime_error&) {
      cloud.points[i].normal.reset();
      cloud.points[i].curvature = 0.0;
      if (singular_fits) ++(*singular_fits);
      continue;
    }
    cloud.points[i].curvature = compute_curvature(
        cloud, index, static_cast<int>(i), config, singular_fits);
  }
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void merge(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

void cluster_by_curvature(Cloud& cloud, const CurvatureConfig& config) {
  const int n = static_cast<int>(cloud.size());
  std::vector<int> nonflat;
  for (int i = 0; i < n; ++i) {
    const double kappa = cloud.points[i].curvature.value_or(0.0);
    if (std::abs(kappa) < config.flat_threshold) {
      cloud.points[i].cluster_id = 0;
    } else {
      cloud.points[i].cluster_id.reset();
      nonflat.push_back(i);
    }
  }
  if (nonflat.empty()) return;

  std::vector<Vec3> pts;
  pts.reserve(nonflat.size());
  for (int i : nonflat) pts.push_back(cloud.points[i].position);
  KdTree tree(pts);
  UnionFind uf(static_cast<int>(nonflat.size()));
  for (std::size_t i = 0; i < nonflat.size(); ++i) {
    for (int j : tree.radius(pts[i], config.cluster_radius)) {
      uf.merge(static_cast<int>(i), j);
    }
  }
  // Relabel roots to consecutive ids starting at 1; drop small clusters.
  std::unordered_map<int, int> counts;
  for (std::size_t i = 0; i < nonflat.size(); ++i) ++counts[uf.find(static_cast<int>(i))];
  std::unordered_map<int, int> label;
  int next = 1;
  for (std::size_t i = 0; i < nonflat.size(); ++i) {
    const int root = uf.find(static_cast<int>(i));
    if (counts[root] < config.min_cluster_size) continue;  // removed
    auto [it, inserted] = label.try_emplace(root, next);
    if (inserted) ++next;
    cloud.points[nonflat[i]].cluster_id = it->second;
  }
}

namespace {

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::size_t h = std::hash<std::int64_t>{}(k.x);
    h ^= std::hash<std::int64_t>{}(k.y) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h ^= std::hash<std::int64_t>{}(k.z) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
  }
};

VoxelKey voxel_of(const Vec3& p, double voxel) {
  return {static_cast<std::int64_t>(std::floor(p.x() / voxel)),
          static_cast<std::int64_t>(std::floor(p.y() / voxel)),
          static_cast<std::int64_t>(std::floor(p.z() / voxel))};
}

// One representative per occupied voxel: the input point nearest the
// centroid of the points falling in that voxel.
void voxel_reduce(const Cloud& cloud, const std::vector<int>& subset,
                  double voxel, std::vector<int>& out) {
  struct Cell {
    Vec3 sum = Vec3::Zero();
    std::vector<int> members;
  };
  std::unordered_map<VoxelKey, Cell, VoxelKeyHash> cells;
  for (int i : subset) {
    Cell& c = cells[voxel_of(cloud.points[i].position, voxel)];
    c.sum += cloud.points[i].position;
    c.members.push_back(i);
  }
  for (auto& [key, cell] : cells) {
    const Vec3 centroid = cell.sum / static_cast<double>(cell.members.size());
    int best = cell.members.front();
    double best_d2 = (cloud.points[best].position - centroid).squaredNorm();
    for (int i : cell.members) {
      const double d2 = (cloud.points[i].position - centroid).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
        best = i;
        best_d2 = d2;
      }
    }
    out.push_back(best);
  }
}

}  // namespace

Cloud downsample_curvature_aware(const Cloud& cloud,
                                 const CurvatureConfig& config) {
  std::unordered_map<int, std::vector<int>> clusters;
  for (int i = 0; i < static_cast<int>(cloud.size()); ++i) {
    if (cloud.points[i].cluster_id) {
      clusters[*cloud.points[i].cluster_id].push_back(i);
    }
  }
  std::vector<int> keep;
  for (auto& [id, members] : clusters) {
    double mean_abs = 0.0;
    for (int i : members) {
      mean_abs += std::abs(cloud.points[i].curvature.value_or(0.0));
    }
    mean_abs /= static_cast<double>(members.size());
    const double voxel =
        mean_abs < config.flat_threshold ? config.coarse_voxel : config.fine_voxel;
    voxel_reduce(cloud, members, voxel, keep);
  }
  std::sort(keep.begin(), keep.end());
  Cloud out;
  out.frame_id = cloud.frame_id;
  out.sensor_origin = cloud.sensor_origin;
  out.points.reserve(keep.size());
  for (int i : keep) out.points.push_back(cloud.points[i]);
  return out;
}

Cloud downsample_uniform(const Cloud& cloud, double voxel) {
  std::vector<int> all(cloud.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<int> keep;
  voxel_reduce(cloud, all, voxel, keep);
  std::sort(keep.begin(), keep.end());
  Cloud out;
  out.frame_id = cloud.frame_id;
  out.sensor_origin = cloud.sensor_origin;
  out.points.reserve(keep.size());
  for (int i : keep) out.points.push_back(cloud.points[i]);
  return out;
}

Cloud transform_cloud(const Cloud& cloud, const Pose& pose) {
  Cloud out = cloud;
  out.sensor_origin = pose.apply(cloud.sensor_origin);
  for (auto& p : out.points) {
    p.position = pose.apply(p.position);
    if (p.normal) p.normal = pose.rotation * (*p.normal);
  }
  return out;
}

namespace {

std::string fmt17(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void save_cloud_csv(const Cloud& cloud, const std::string& path) {
  const bool has_attrs =
      !cloud.points.empty() && cloud.points.front().normal.has_value();
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_cloud_csv: cannot open " + path);
  f << "x,y,z,radial_velocity,timestamp";
  if (has_attrs) f << ",nx,ny,nz,curvature,cluster";
  f << "\n";
  for (const auto& p : cloud.points) {
    f << fmt17(p.position.x()) << ',' << fmt17(p.position.y()) << ','
      << fmt17(p.position.z()) << ',' << fmt17(p.radial_velocity) << ','
      << fmt17(p.timestamp);
    if (has_attrs) {
      const Vec3 n = p.normal.value_or(Vec3::Zero());
      f << ',' << fmt17(n.x()) << ',' << fmt17(n.y()) << ',' << fmt17(n.z())
        << ',' << fmt17(p.curvature.value_or(0.0)) << ','
        << (p.cluster_id ? std::to_string(*p.cluster_id) : std::string("-1"));
    }
    f << "\n";
  }
}

Cloud load_cloud_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_cloud_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty cloud file");
  const bool has_attrs = line.find(",nx,") != std::string::npos;
  Cloud out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<double> vals;
    while (std::getline(ss, tok, ',')) vals.push_back(std::stod(tok));
    Point p;
    p.position = Vec3(vals[0], vals[1], vals[2]);
    p.radial_velocity = vals[3];
    p.timestamp = vals[4];
    if (has_attrs && vals.size() >= 10) {
      p.normal = Vec3(vals[5], vals[6], vals[7]);
      p.curvature = vals[8];
      const int cid = static_cast<int>(vals[9]);
      if (cid >= 0) p.cluster_id = cid;
    }
    out.points.push_back(p);
  }
  return out;
}

}  // namespace dltr
