#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "slidekit/image.hpp"

namespace slidekit {

enum class StainCategory { HE, IHC, Other };
enum class Prep { FFPE, FF };

std::string to_string(StainCategory c);
std::string to_string(Prep p);
StainCategory parse_stain_category(const std::string& s);

struct SlideRecord {
  std::string slide_id;
  std::string case_id;
  std::string lab;
  std::string tissue_type;
  std::string staining;
  StainCategory staining_category = StainCategory::HE;
  std::string scanner;
  Prep prep = Prep::FFPE;
  std::optional<std::string> diagnosis;
  double mpp = 0.5;
  std::string image_path;  // as written in the manifest; relative to it
  int group_id = -1;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();  // unknown fields, kept for round-trip
};

nlohmann::ordered_json to_json(const SlideRecord& r);

// Ordered, immutable-after-load collection of slides with unique ids.
class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::filesystem::path base_dir) : base_dir_(std::move(base_dir)) {}

  void add(SlideRecord record);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const SlideRecord& operator[](std::size_t i) const { return records_[i]; }
  SlideRecord& operator[](std::size_t i) { return records_[i]; }
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

  const SlideRecord* find(const std::string& slide_id) const;
  std::optional<std::size_t> index_of(const std::string& slide_id) const;
  const SlideRecord& at(const std::string& slide_id) const;

  std::filesystem::path image_path(const SlideRecord& r) const;
  const std::filesystem::path& base_dir() const { return base_dir_; }

 private:
  std::vector<SlideRecord> records_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::filesystem::path base_dir_;
};

// JSON Lines, one SlideRecord per line. Blank lines are skipped.
Catalog parse_manifest(std::istream& in, std::filesystem::path base_dir);
Catalog load_manifest(const std::filesystem::path& path);
std::string serialize_manifest(const Catalog& catalog);
void save_manifest(const Catalog& catalog, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Slide grouping

struct GroupPredicate {
  std::string field;                // lab | tissue_type | staining | staining_category | diagnosis | scanner | prep
  std::vector<std::string> values;  // any-of; "*" matches everything
};

struct GroupRule {
  std::vector<GroupPredicate> predicates;  // all must hold
  int group_id = 0;
};

// Ordered rule list, first match wins, default group otherwise.
//
// Text format, one directive per line, '#' starts a comment:
//   rule lab=LabA|LabB staining_category=IHC -> 3
//   default -> 0
struct GroupRules {
  std::vector<GroupRule> rules;
  int default_group = -1;

  static GroupRules parse(const std::string& text);
  static GroupRules load(const std::filesystem::path& path);

  int match(const SlideRecord& r) const;
  int group_count() const;
};

Catalog assign_groups(Catalog catalog, const GroupRules& rules);

// ---------------------------------------------------------------------------
// Tissue detection and tiling

struct MaskParams {
  double s_min = 0.05;
  double v_max = 0.95;
  int downsample = 16;
};

struct TissueMask {
  int cols = 0;
  int rows = 0;
  int downsample = 1;
  int image_width = 0;
  int image_height = 0;
  std::vector<std::uint8_t> cells;

  bool at(int cx, int cy) const { return cells[static_cast<std::size_t>(cy) * cols + cx] != 0; }
  double tissue_fraction(int x, int y, int size) const;
  double overall_fraction() const;
};

TissueMask compute_tissue_mask(const RgbImage& image, const MaskParams& params = {});

struct TileRef {
  std::string slide_id;
  int x = 0;
  int y = 0;
  int size = 256;

  bool operator==(const TileRef&) const = default;
};

struct TileOptions {
  int size = 256;
  int stride = 256;
  double min_tissue = 0.25;
};

std::vector<TileRef> enumerate_tiles(const SlideRecord& slide, const TissueMask& mask, const TileOptions& opts = {});

RgbImage read_tile(const Catalog& catalog, const TileRef& tile);

// Caches decoded slide images; safe to share across threads.
class TileSource {
 public:
  explicit TileSource(const Catalog& catalog, std::size_t capacity = 4) : catalog_(catalog), capacity_(capacity) {}

  RgbImage read(const TileRef& tile) const;
  std::shared_ptr<const RgbImage> slide_image(const std::string& slide_id) const;
  const Catalog& catalog() const { return catalog_; }

 private:
  const Catalog& catalog_;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  mutable std::vector<std::pair<std::string, std::shared_ptr<const RgbImage>>> cache_;
};

// Tile lists are persisted as CSV: slide_id,x,y,size
std::string serialize_tiles_csv(std::span<const TileRef> tiles);
void save_tiles_csv(std::span<const TileRef> tiles, const std::filesystem::path& path);
std::vector<TileRef> load_tiles_csv(const std::filesystem::path& path);

}  // namespace slidekit
