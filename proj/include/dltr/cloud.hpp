#pragma once

// Point-cloud containers, exact k-NN search, PCA normals, quadratic-fit
// Gaussian curvature, curvature clustering and voxel downsampling.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dltr/lie.hpp"

namespace dltr {

struct Point {
  Vec3 position = Vec3::Zero();     // m
  double radial_velocity = 0.0;     // m/s
  double timestamp = 0.0;           // s
  std::optional<Vec3> normal;       // unit, sensor-facing
  std::optional<double> curvature;  // 1/m^2 (Gaussian)
  std::optional<int> cluster_id;    // 0 = planar; unset = removed/unassigned
};

struct Cloud {
  std::vector<Point> points;
  std::string frame_id;
  Vec3 sensor_origin = Vec3::Zero();

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct CurvatureConfig {
  int knn_k = 8;                 // >= 6 (quadratic fit has 6 coefficients)
  double flat_threshold = 0.05;  // 1/m^2
  double cluster_radius = 0.5;   // m
  int min_cluster_size = 5;
  double coarse_voxel = 1.0;     // m
  double fine_voxel = 0.1;       // m
};

/// Exact k-nearest-neighbour index over a fixed set of points.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(const std::vector<Vec3>& pts) { build(pts); }
  explicit KdTree(const Cloud& cloud);

  void build(const std::vector<Vec3>& pts);

  /// min(k, n) indices sorted by ascending Euclidean distance.
  std::vector<std::pair<int, double>> knn(const Vec3& query, int k) const;

  /// All indices within radius, unsorted.
  std::vector<int> radius(const Vec3& query, double r) const;

  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    int axis = -1;       // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // index range for leaves
  };

  int build_recursive(int begin, int end, int depth);
  void knn_recursive(int node, const Vec3& q, int k,
                     std::vector<std::pair<double, int>>& heap) const;
  void radius_recursive(int node, const Vec3& q, double r2,
                        std::vector<int>& out) const;

  std::vector<Vec3> points_;
  std::vector<int> indices_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Exact k-NN over a cloud (convenience wrapper building an index per call
/// when none is supplied).
std::vector<std::pair<int, double>> knn_search(const Cloud& cloud,
                                               const Vec3& query, int k);

/// Smallest-eigenvector PCA normal of the k-neighbourhood, sign-flipped to
/// face cloud.sensor_origin. Throws std::runtime_error when the
/// neighbourhood is rank-deficient (two near-zero eigenvalues).
Vec3 estimate_normal(const Cloud& cloud, const KdTree& index, int point_index,
                     int k);

/// Gaussian curvature from a local quadratic surface fit
/// z(u,v) = a u^2 + b uv + c v^2 + d u + e v + f, evaluated at the fit
/// origin via the first/second fundamental forms. Returns 0 (flat) and
/// increments *singular_fits when the fit system is ill-conditioned.
double compute_curvature(const Cloud& cloud, const KdTree& index,
                         int point_index, const CurvatureConfig& config,
                         int* singular_fits = nullptr);

/// Fills normals and curvatures for every point of the cloud in place.
void compute_normals_and_curvatures(Cloud& cloud, const CurvatureConfig& config,
                                    int* singular_fits = nullptr);

/// Union-find clustering: |kappa| < flat_threshold -> cluster 0; remaining
/// points merged over cluster_radius neighbourhoods; clusters smaller than
/// min_cluster_size get cluster_id unset (removed).
void cluster_by_curvature(Cloud& cloud, const CurvatureConfig& config);

/// Per-cluster voxel downsampling: clusters with mean |kappa| below
/// flat_threshold use coarse_voxel, others fine_voxel. Representative is
/// the input point nearest the voxel centroid (attributes kept verbatim).
Cloud downsample_curvature_aware(const Cloud& cloud,
                                 const CurvatureConfig& config);

/// Single-resolution voxel downsampling with the same representative rule.
Cloud downsample_uniform(const Cloud& cloud, double voxel);

/// Rigidly transforms all positions and normals; sensor_origin follows.
Cloud transform_cloud(const Cloud& cloud, const Pose& pose);

/// CSV round trip: header x,y,z,radial_velocity,timestamp[,nx,ny,nz,
/// curvature,cluster]; optional columns written only when computed.
void save_cloud_csv(const Cloud& cloud, const std::string& path);
Cloud load_cloud_csv(const std::string& path);

}  // namespace dltr
