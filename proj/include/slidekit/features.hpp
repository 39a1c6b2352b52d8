#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "slidekit/catalog.hpp"
#include "slidekit/color.hpp"
#include "slidekit/stain.hpp"

namespace slidekit {

inline constexpr int kFeatureDim = 36;

// Layout: for each space in (RGB, LAB, HSV, HED), for each channel, the
// triple (mean, std, median). Index = space * 9 + channel * 3 + stat.
using FeatureVector = Eigen::Matrix<double, kFeatureDim, 1>;

enum class FeatureStat { Mean = 0, Std = 1, Median = 2 };

constexpr int feature_index(int space, int channel, FeatureStat stat) {
  return space * 9 + channel * 3 + static_cast<int>(stat);
}

struct ChannelSummary {
  double mean = 0.0;
  double std = 0.0;
  double median = 0.0;
};

// Population mean and std; median from a 1024-bin histogram over the
// channel's [min, max] (bin center of the lower-median rank).
ChannelSummary summarize_channel(const Eigen::Ref<const Eigen::VectorXd>& values);

// Exact lower median of 8-bit values via a 256-bin histogram.
ChannelSummary summarize_byte_channel(const RgbImage& img, int channel);

FeatureVector features_36(const RgbImage& img, const StainMatrix& stains = StainMatrix::hed_default());

// Per-slide staining statistics in the l-alpha-beta transfer space.
struct StainStats {
  std::string slide_id;
  Vec3<double> mean = Vec3<double>::Zero();
  Vec3<double> std = Vec3<double>::Zero();
  int patch_count = 0;
};

// Channel mean/std of an image in l-alpha-beta (patch_count = 1).
StainStats image_stain_stats(const RgbImage& img, const std::string& slide_id = "");

StainStats slide_stain_stats(const TileSource& source, const std::string& slide_id, std::span<const TileRef> tiles,
                             int max_tiles = 500, std::uint64_t seed = 0);

using StainStatsTable = std::map<std::string, StainStats>;

// CSV: slide_id,patch_count,mean_l,mean_alpha,mean_beta,std_l,std_alpha,std_beta
std::string serialize_stain_stats(const StainStatsTable& table);
void save_stain_stats(const StainStatsTable& table, const std::filesystem::path& path);
StainStatsTable load_stain_stats(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// "RVFV" row table: per-row (slide index, x, y) plus a float vector.
//
//   magic "RVFV" | version u32 | dim u32 | count u64 |
//   count x (u32 slide_index, u32 x, u32 y, dim x f32)      all little-endian

struct RowKey {
  std::uint32_t slide_index = 0;
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  bool operator==(const RowKey&) const = default;
};

struct FeatureTable {
  static constexpr std::uint32_t kVersion = 1;

  int dim = kFeatureDim;
  std::vector<RowKey> keys;
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values;

  std::size_t size() const { return keys.size(); }

  std::string serialize() const;
  static FeatureTable deserialize(std::string_view bytes, const std::string& what = "feature table");
  void save(const std::filesystem::path& path) const;
  static FeatureTable load(const std::filesystem::path& path);
};

// Features of every tile; slide index is the slide's position in the catalog.
FeatureTable compute_feature_table(const TileSource& source, std::span<const TileRef> tiles);

}  // namespace slidekit
