#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "slidekit/catalog.hpp"

namespace slidekit {

using EmbeddingMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual int dim() const = 0;
  virtual Eigen::VectorXf embed(const RgbImage& tile) const = 0;
};

// The 36 color statistics, L2-normalized.
class FeatureEmbedder final : public Embedder {
 public:
  int dim() const override { return 36; }
  Eigen::VectorXf embed(const RgbImage& tile) const override;
};

// Seeded Gaussian projection of the normalized 36-d features to any dim.
class RandomProjectionEmbedder final : public Embedder {
 public:
  RandomProjectionEmbedder(int dim, std::uint64_t seed);
  int dim() const override { return static_cast<int>(projection_.rows()); }
  Eigen::VectorXf embed(const RgbImage& tile) const override;

 private:
  Eigen::MatrixXd projection_;  // dim x 36
};

struct TileCoord {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  auto operator<=>(const TileCoord&) const = default;
};

struct SlideEmbeddings {
  std::string slide_id;
  std::string diagnosis;
  std::vector<TileCoord> coords;
  EmbeddingMatrix vectors;  // coords.size() x dim

  std::optional<std::size_t> row_of(const TileCoord& c) const;
};

// Per-slide embedding blocks.
//
//   "RVES" | version u32 | dim u32 | slide_count u32 |
//   per slide: u16 len + id | u16 len + diagnosis | tile_count u32 |
//              tile_count x (u32 x, u32 y) | tile_count x dim f32 (row-major)
class EmbeddingStore {
 public:
  static constexpr std::uint32_t kVersion = 1;

  EmbeddingStore() = default;
  explicit EmbeddingStore(int dim) : dim_(dim) {}

  int dim() const { return dim_; }
  std::size_t size() const { return slides_.size(); }
  bool empty() const { return slides_.empty(); }
  const std::vector<SlideEmbeddings>& slides() const { return slides_; }
  std::size_t tile_count() const;

  void add(SlideEmbeddings slide);
  const SlideEmbeddings* find(const std::string& slide_id) const;

  std::string serialize() const;
  static EmbeddingStore deserialize(std::string_view bytes, const std::string& what = "embedding store");
  void save(const std::filesystem::path& path) const;
  static EmbeddingStore load(const std::filesystem::path& path);

 private:
  int dim_ = 0;
  std::vector<SlideEmbeddings> slides_;
  std::map<std::string, std::size_t> by_id_;
};

struct BuildReport {
  std::vector<std::string> skipped;  // slides without tiles
};

// Embeds every tile of every catalog slide (catalog order). Slides with no
// tiles are skipped and listed in the report. exclude removes slide ids.
EmbeddingStore build_store(const Catalog& catalog, const std::map<std::string, std::vector<TileRef>>& tiles_by_slide,
                           const Embedder& embedder, const TileSource& source, BuildReport* report = nullptr,
                           const std::set<std::string>& exclude = {});

// ---------------------------------------------------------------------------
// Scoring

// Rows scaled to unit norm; zero rows stay zero (cosine defined as 0).
template <typename Derived>
Eigen::MatrixXd normalized_rows(const Eigen::MatrixBase<Derived>& m) {
  Eigen::MatrixXd out = m.template cast<double>();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

// P x T cosine similarity matrix, clamped to [-1, 1].
template <typename DerivedA, typename DerivedB>
Eigen::MatrixXd cosine_matrix(const Eigen::MatrixBase<DerivedA>& roi, const Eigen::MatrixBase<DerivedB>& candidate) {
  return (normalized_rows(roi) * normalized_rows(candidate).transpose()).cwiseMax(-1.0).cwiseMin(1.0);
}

// Mean over ROI rows of the mean of the min(k, T) largest cosines against the
// candidate rows.
inline double slide_score_from_cosines(const Eigen::MatrixXd& cos, int k) {
  const Eigen::Index t = cos.cols();
  const auto kk = static_cast<std::size_t>(std::min<Eigen::Index>(k, t));
  std::vector<double> row(static_cast<std::size_t>(t));
  double total = 0.0;
  for (Eigen::Index p = 0; p < cos.rows(); ++p) {
    for (Eigen::Index j = 0; j < t; ++j) row[static_cast<std::size_t>(j)] = cos(p, j);
    std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(kk), row.end(), std::greater<>());
    double s = 0.0;
    for (std::size_t i = 0; i < kk; ++i) s += row[i];
    total += s / static_cast<double>(kk);
  }
  return total / static_cast<double>(cos.rows());
}

template <typename DerivedA, typename DerivedB>
double slide_score(const Eigen::MatrixBase<DerivedA>& roi, const Eigen::MatrixBase<DerivedB>& candidate, int k) {
  if (roi.rows() < 1 || candidate.rows() < 1) throw std::invalid_argument("slide_score: empty ROI or candidate");
  if (k < 1) throw std::invalid_argument("slide_score: k must be >= 1");
  if (roi.cols() != candidate.cols()) throw std::invalid_argument("slide_score: dimension mismatch");
  return slide_score_from_cosines(cosine_matrix(roi, candidate), k);
}

struct QueryROI {
  std::string slide_id;
  std::vector<TileCoord> tiles;

  static QueryROI from_json(const std::string& text);
  std::string to_json() const;
};

struct QueryOptions {
  int k = 5;
  int top_n = 10;
  bool include_self = false;
  bool with_maps = true;
};

struct RankedEntry {
  std::string slide_id;
  double score = 0.0;
  std::string diagnosis;
  std::vector<TileCoord> coords;      // candidate tiles, when maps are requested
  std::vector<double> similarity;     // max-over-ROI cosine per candidate tile
};

struct RankedResult {
  std::string query_slide;
  std::vector<RankedEntry> entries;  // score descending, then slide_id ascending
};

// Rows of the query slide selected by the ROI; throws on unknown tiles.
EmbeddingMatrix roi_vectors(const EmbeddingStore& store, const QueryROI& roi);

RankedResult query_topn(const EmbeddingStore& store, const QueryROI& roi, const QueryOptions& opts = {});

// ROI vectors supplied directly (e.g. embedded from pixels by the caller).
RankedResult query_topn(const EmbeddingStore& store, const EmbeddingMatrix& roi, const std::string& query_slide,
                        const QueryOptions& opts);

// Fraction of queries whose first k results contain the true diagnosis, for
// each k. Throws when a true diagnosis is not in known_labels.
std::vector<double> topk_accuracy(std::span<const RankedResult> results, std::span<const std::string> truths,
                                  std::span<const int> ks, const std::set<std::string>& known_labels);

}  // namespace slidekit
