#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "slidekit/catalog.hpp"

namespace slidekit {

enum class SamplingMode {
  Product,    // P(g, c) proportional to w_g * w_c over non-empty buckets
  TwoStage,   // P(g) proportional to w_g over groups with mass, then P(c | g)
};

// Group and meta-cluster weights.
//
// Text format ('#' comments):
//   mode product            # or two-stage
//   group_default 1.0
//   group 30 4.0
//   meta_default 1.0
//   meta 2 0.5
struct WeightTable {
  SamplingMode mode = SamplingMode::Product;
  double group_default = 1.0;
  double meta_default = 1.0;
  std::map<int, double> group_overrides;
  std::map<int, double> meta_overrides;

  double group_weight(int g) const;
  double meta_weight(int c) const;

  static WeightTable parse(const std::string& text);
  static WeightTable load(const std::filesystem::path& path);

  // Uniform group/meta weights from explicit vectors (index = id).
  static WeightTable from_vectors(std::span<const double> groups, std::span<const double> metas);
};

using BucketKey = std::pair<int, int>;  // (group_id, meta_id)

// Partition of surviving tiles into (group, meta) buckets; ordered by key.
class SamplerIndex {
 public:
  void add(const BucketKey& key, TileRef tile);

  const std::map<BucketKey, std::vector<TileRef>>& buckets() const { return buckets_; }
  std::size_t bucket_count() const { return buckets_.size(); }
  std::size_t tile_count() const { return tile_count_; }
  bool empty() const { return tile_count_ == 0; }

 private:
  std::map<BucketKey, std::vector<TileRef>> buckets_;
  std::size_t tile_count_ = 0;
};

// meta_labels[i] is the meta id of tiles[i], kDropped rows are skipped.
SamplerIndex build_index(const Catalog& catalog, std::span<const TileRef> tiles, std::span<const int> meta_labels);

// Target probability of each bucket (same order as index.buckets()).
// Throws when no non-empty bucket carries positive weight.
std::vector<double> target_distribution(const SamplerIndex& index, const WeightTable& weights);

// Deterministic, restartable, unbounded sequence of tiles. Element i depends
// only on (seed, i): bucket by inverse CDF on one counter draw, tile uniformly
// within the bucket on a second.
class TileStream {
 public:
  TileStream(const SamplerIndex& index, const WeightTable& weights, std::uint64_t seed, std::uint64_t offset = 0);

  const TileRef& next();
  const TileRef& at(std::uint64_t i) const;
  std::size_t bucket_at(std::uint64_t i) const;
  std::uint64_t position() const { return position_; }

  const std::vector<double>& probabilities() const { return probabilities_; }

 private:
  std::vector<const std::vector<TileRef>*> buckets_;
  std::vector<double> probabilities_;
  std::vector<double> cumulative_;
  std::uint64_t seed_;
  std::uint64_t position_;
};

std::vector<TileRef> draw(const SamplerIndex& index, const WeightTable& weights, std::size_t n, std::uint64_t seed);

}  // namespace slidekit
