#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace slidekit {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct KMeansOptions {
  int k = 100;
  int max_iter = 100;
  double tol = 1e-6;  // stop when every centroid moves less than this
  std::uint64_t seed = 0;
};

struct ClusterModel {
  static constexpr std::uint32_t kVersion = 1;

  int k = 0;
  RowMatrixXd centroids;  // k x dim
  double inertia = 0.0;
  int iterations_run = 0;
  std::vector<double> inertia_history;  // inertia after each assignment step; not persisted

  int dim() const { return static_cast<int>(centroids.cols()); }

  // "RVCM" | version u32 | k u32 | dim u32 | centroids f32 row-major | inertia f64
  std::string serialize() const;
  static ClusterModel deserialize(std::string_view bytes, const std::string& what = "cluster model");
  void save(const std::filesystem::path& path) const;
  static ClusterModel load(const std::filesystem::path& path);
};

// k-means++ seeding then exact Lloyd iterations. Throws when N < k.
ClusterModel kmeans_fit(const Eigen::Ref<const RowMatrixXd>& points, const KMeansOptions& opts = {});

// Index of the nearest centroid per row (ties -> lowest index).
std::vector<int> assign_nearest(const Eigen::Ref<const RowMatrixXd>& centroids, const Eigen::Ref<const RowMatrixXd>& points);

// Per-slide uniform subsample without replacement: min(n_per_slide, available)
// rows from each group. Returns sorted row indices into the concatenated table.
std::vector<std::size_t> subsample_patches(std::span<const std::vector<std::size_t>> rows_by_slide, int n_per_slide,
                                           std::uint64_t seed);

// Majority label among the knn nearest labeled rows (Euclidean). Ties in the
// vote go to the smallest label; equal distances keep labeled-row order.
std::vector<int> propagate_labels(const Eigen::Ref<const RowMatrixXd>& labeled, std::span<const int> labels,
                                  const Eigen::Ref<const RowMatrixXd>& queries, int knn = 1);

// ---------------------------------------------------------------------------

inline constexpr int kDropped = -1;

// Expert-curated mapping raw cluster id -> meta cluster (or DROP).
//
// Text format ('#' comments):
//   raw_clusters 100
//   meta 0 2.0 Tumor epithelium
//   map 0-11 0
//   map 12 3
//   drop 13 40-45
struct MergeMap {
  int raw_clusters = 0;
  std::vector<int> target;  // raw id -> meta id or kDropped
  std::vector<double> meta_weights;
  std::vector<std::string> meta_descriptions;

  int meta_count() const { return static_cast<int>(meta_weights.size()); }

  static MergeMap parse(const std::string& text);
  static MergeMap load(const std::filesystem::path& path);
  std::string serialize() const;
  void validate() const;
};

// Meta id per row, kDropped for filtered rows.
std::vector<int> apply_merge_map(std::span<const int> raw_labels, const MergeMap& map);

}  // namespace slidekit
