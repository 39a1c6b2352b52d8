#include "slidekit/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace slidekit {

using nlohmann::ordered_json;

std::string to_string(StainCategory c) {
  switch (c) {
    case StainCategory::HE: return "HE";
    case StainCategory::IHC: return "IHC";
    case StainCategory::Other: return "OTHER";
  }
  return "OTHER";
}

std::string to_string(Prep p) { return p == Prep::FF ? "FF" : "FFPE"; }

StainCategory parse_stain_category(const std::string& s) {
  if (s == "HE" || s == "H&E") return StainCategory::HE;
  if (s == "IHC") return StainCategory::IHC;
  if (s == "OTHER") return StainCategory::Other;
  throw Error("unknown staining category \"" + s + "\" (expected HE, IHC or OTHER)");
}

namespace {

const std::set<std::string> kKnownFields = {"slide_id", "case_id",     "lab",   "tissue_type", "staining",
                                            "staining_category", "scanner", "prep", "diagnosis", "mpp",
                                            "image_path", "group_id"};

std::string string_field(const ordered_json& j, const char* name, std::size_t line, bool required) {
  auto it = j.find(name);
  if (it == j.end() || it->is_null()) {
    if (required) throw Error("line " + std::to_string(line) + ": missing field " + name);
    return {};
  }
  if (!it->is_string()) throw Error("line " + std::to_string(line) + ": field " + name + " must be a string");
  return it->get<std::string>();
}

SlideRecord record_from_json(const ordered_json& j, std::size_t line) {
  if (!j.is_object()) throw Error("line " + std::to_string(line) + ": expected a JSON object");
  SlideRecord r;
  r.slide_id = string_field(j, "slide_id", line, true);
  if (r.slide_id.empty()) throw Error("line " + std::to_string(line) + ": empty slide_id");
  r.case_id = string_field(j, "case_id", line, false);
  r.lab = string_field(j, "lab", line, false);
  r.tissue_type = string_field(j, "tissue_type", line, false);
  r.staining = string_field(j, "staining", line, false);
  r.scanner = string_field(j, "scanner", line, false);
  r.image_path = string_field(j, "image_path", line, true);

  const std::string cat = string_field(j, "staining_category", line, false);
  try {
    r.staining_category = cat.empty() ? (r.staining == "HE" || r.staining == "H&E" || r.staining.empty()
                                             ? StainCategory::HE
                                             : StainCategory::Other)
                                      : parse_stain_category(cat);
  } catch (const Error& e) {
    throw Error("line " + std::to_string(line) + ": " + e.what());
  }

  const std::string prep = string_field(j, "prep", line, false);
  if (prep.empty() || prep == "FFPE") {
    r.prep = Prep::FFPE;
  } else if (prep == "FF") {
    r.prep = Prep::FF;
  } else {
    throw Error("line " + std::to_string(line) + ": prep must be FFPE or FF");
  }

  if (auto it = j.find("diagnosis"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw Error("line " + std::to_string(line) + ": field diagnosis must be a string");
    r.diagnosis = it->get<std::string>();
  }

  auto mpp = j.find("mpp");
  if (mpp == j.end() || mpp->is_null()) throw Error("line " + std::to_string(line) + ": missing field mpp");
  if (!mpp->is_number()) throw Error("line " + std::to_string(line) + ": field mpp must be a number");
  r.mpp = mpp->get<double>();
  if (!(r.mpp > 0.0) || !std::isfinite(r.mpp)) throw Error("line " + std::to_string(line) + ": mpp must be > 0");

  if (auto it = j.find("group_id"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw Error("line " + std::to_string(line) + ": group_id must be an integer");
    r.group_id = it->get<int>();
  }

  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!kKnownFields.count(it.key())) r.extra[it.key()] = it.value();
  }
  return r;
}

}  // namespace

ordered_json to_json(const SlideRecord& r) {
  ordered_json j;
  j["slide_id"] = r.slide_id;
  j["case_id"] = r.case_id;
  j["lab"] = r.lab;
  j["tissue_type"] = r.tissue_type;
  j["staining"] = r.staining;
  j["staining_category"] = to_string(r.staining_category);
  j["scanner"] = r.scanner;
  j["prep"] = to_string(r.prep);
  if (r.diagnosis) j["diagnosis"] = *r.diagnosis;
  j["mpp"] = r.mpp;
  j["image_path"] = r.image_path;
  j["group_id"] = r.group_id;
  for (auto it = r.extra.begin(); it != r.extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

void Catalog::add(SlideRecord record) {
  if (by_id_.count(record.slide_id)) throw Error("duplicate slide_id " + record.slide_id);
  by_id_.emplace(record.slide_id, records_.size());
  records_.push_back(std::move(record));
}

const SlideRecord* Catalog::find(const std::string& slide_id) const {
  auto it = by_id_.find(slide_id);
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

std::optional<std::size_t> Catalog::index_of(const std::string& slide_id) const {
  auto it = by_id_.find(slide_id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

const SlideRecord& Catalog::at(const std::string& slide_id) const {
  const SlideRecord* r = find(slide_id);
  if (!r) throw Error("unknown slide_id " + slide_id);
  return *r;
}

std::filesystem::path Catalog::image_path(const SlideRecord& r) const {
  std::filesystem::path p(r.image_path);
  return p.is_absolute() ? p : base_dir_ / p;
}

Catalog parse_manifest(std::istream& in, std::filesystem::path base_dir) {
  Catalog catalog(std::move(base_dir));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
    }
    SlideRecord r = record_from_json(j, line_no);
    if (catalog.find(r.slide_id)) throw Error("line " + std::to_string(line_no) + ": duplicate slide_id " + r.slide_id);
    catalog.add(std::move(r));
  }
  return catalog;
}

Catalog load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

std::string serialize_manifest(const Catalog& catalog) {
  std::string out;
  for (const auto& r : catalog) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

void save_manifest(const Catalog& catalog, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << serialize_manifest(catalog);
}

// ---------------------------------------------------------------------------

namespace {

std::string field_value(const SlideRecord& r, const std::string& field) {
  if (field == "lab") return r.lab;
  if (field == "tissue_type") return r.tissue_type;
  if (field == "staining") return r.staining;
  if (field == "staining_category") return to_string(r.staining_category);
  if (field == "diagnosis") return r.diagnosis.value_or("");
  if (field == "scanner") return r.scanner;
  if (field == "prep") return to_string(r.prep);
  throw ConfigError("unknown rule field " + field);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

int parse_group_id(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    int v = std::stoi(s, &used);
    if (used != s.size() || v < 0) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("group rules line " + std::to_string(line) + ": bad group id \"" + s + "\"");
  }
}

}  // namespace

GroupRules GroupRules::parse(const std::string& text) {
  static const std::set<std::string> kFields = {"lab",      "tissue_type", "staining", "staining_category",
                                                "diagnosis", "scanner",    "prep"};
  GroupRules rules;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    for (std::string t; ls >> t;) tokens.push_back(t);
    if (tokens.empty()) continue;

    const auto arrow = std::find(tokens.begin(), tokens.end(), "->");
    if (arrow == tokens.end() || arrow + 2 != tokens.end()) {
      throw ConfigError("group rules line " + std::to_string(line_no) + ": expected '... -> <group>'");
    }
    const int gid = parse_group_id(tokens.back(), line_no);
    if (tokens[0] == "default") {
      if (arrow != tokens.begin() + 1) throw ConfigError("group rules line " + std::to_string(line_no) + ": default takes no predicates");
      rules.default_group = gid;
    } else if (tokens[0] == "rule") {
      GroupRule rule;
      rule.group_id = gid;
      for (auto it = tokens.begin() + 1; it != arrow; ++it) {
        const auto eq = it->find('=');
        if (eq == std::string::npos) throw ConfigError("group rules line " + std::to_string(line_no) + ": predicate must be field=value");
        GroupPredicate p{it->substr(0, eq), split(it->substr(eq + 1), '|')};
        if (!kFields.count(p.field)) throw ConfigError("group rules line " + std::to_string(line_no) + ": unknown field " + p.field);
        rule.predicates.push_back(std::move(p));
      }
      rules.rules.push_back(std::move(rule));
    } else {
      throw ConfigError("group rules line " + std::to_string(line_no) + ": unknown directive " + tokens[0]);
    }
  }
  if (rules.default_group < 0) throw ConfigError("group rules: missing 'default -> <group>'");

  std::set<int> ids{rules.default_group};
  for (const auto& r : rules.rules) ids.insert(r.group_id);
  if (*ids.rbegin() != static_cast<int>(ids.size()) - 1) {
    throw ConfigError("group rules: group ids must be dense in [0, G)");
  }
  return rules;
}

GroupRules GroupRules::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open group rules " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

int GroupRules::match(const SlideRecord& r) const {
  for (const auto& rule : rules) {
    bool ok = true;
    for (const auto& p : rule.predicates) {
      const std::string v = field_value(r, p.field);
      if (std::none_of(p.values.begin(), p.values.end(), [&](const std::string& want) { return want == "*" || want == v; })) {
        ok = false;
        break;
      }
    }
    if (ok) return rule.group_id;
  }
  return default_group;
}

int GroupRules::group_count() const {
  int g = default_group;
  for (const auto& r : rules) g = std::max(g, r.group_id);
  return g + 1;
}

Catalog assign_groups(Catalog catalog, const GroupRules& rules) {
  for (std::size_t i = 0; i < catalog.size(); ++i) catalog[i].group_id = rules.match(catalog[i]);
  return catalog;
}

// ---------------------------------------------------------------------------

double TissueMask::tissue_fraction(int x, int y, int size) const {
  const int c0 = x / downsample;
  const int r0 = y / downsample;
  const int c1 = std::min(cols, (x + size + downsample - 1) / downsample);
  const int r1 = std::min(rows, (y + size + downsample - 1) / downsample);
  if (c1 <= c0 || r1 <= r0) return 0.0;
  int hit = 0;
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) hit += at(c, r) ? 1 : 0;
  return static_cast<double>(hit) / ((c1 - c0) * (r1 - r0));
}

double TissueMask::overall_fraction() const {
  if (cells.empty()) return 0.0;
  return static_cast<double>(std::count(cells.begin(), cells.end(), 1)) / static_cast<double>(cells.size());
}

TissueMask compute_tissue_mask(const RgbImage& image, const MaskParams& params) {
  if (image.empty()) throw Error("tissue mask: zero-area image");
  if (params.downsample < 1) throw Error("tissue mask: downsample must be >= 1");
  TissueMask mask;
  mask.downsample = params.downsample;
  mask.image_width = image.width;
  mask.image_height = image.height;
  mask.cols = (image.width + params.downsample - 1) / params.downsample;
  mask.rows = (image.height + params.downsample - 1) / params.downsample;
  mask.cells.assign(static_cast<std::size_t>(mask.cols) * mask.rows, 0);

  for (int cy = 0; cy < mask.rows; ++cy) {
    for (int cx = 0; cx < mask.cols; ++cx) {
      const int x0 = cx * params.downsample, y0 = cy * params.downsample;
      const int x1 = std::min(image.width, x0 + params.downsample);
      const int y1 = std::min(image.height, y0 + params.downsample);
      double sum[3] = {0, 0, 0};
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          for (int c = 0; c < 3; ++c) sum[c] += image.at(x, y, c);
      const double n = static_cast<double>((x1 - x0) * (y1 - y0)) * 255.0;
      const double r = sum[0] / n, g = sum[1] / n, b = sum[2] / n;
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
      const double value = mx;
      const double saturation = mx > 0.0 ? (mx - mn) / mx : 0.0;
      mask.cells[static_cast<std::size_t>(cy) * mask.cols + cx] =
          (saturation >= params.s_min && value <= params.v_max) ? 1 : 0;
    }
  }
  return mask;
}

std::vector<TileRef> enumerate_tiles(const SlideRecord& slide, const TissueMask& mask, const TileOptions& opts) {
  if (opts.size <= 0 || opts.stride <= 0) throw Error("tile size and stride must be positive");
  std::vector<TileRef> tiles;
  for (int y = 0; y + opts.size <= mask.image_height; y += opts.stride) {
    for (int x = 0; x + opts.size <= mask.image_width; x += opts.stride) {
      if (mask.tissue_fraction(x, y, opts.size) >= opts.min_tissue) tiles.push_back({slide.slide_id, x, y, opts.size});
    }
  }
  return tiles;
}

RgbImage read_tile(const Catalog& catalog, const TileRef& tile) {
  const SlideRecord* r = catalog.find(tile.slide_id);
  if (!r) throw Error("unknown slide_id " + tile.slide_id);
  const auto path = catalog.image_path(*r);
  if (!std::filesystem::exists(path)) throw IoError("slide " + tile.slide_id + ": image missing at " + path.string());
  return read_image(path.string()).crop(tile.x, tile.y, tile.size, tile.size);
}

std::shared_ptr<const RgbImage> TileSource::slide_image(const std::string& slide_id) const {
  {
    std::lock_guard lock(mutex_);
    for (auto it = cache_.begin(); it != cache_.end(); ++it) {
      if (it->first == slide_id) {
        auto img = it->second;
        std::rotate(cache_.begin(), it, it + 1);
        return img;
      }
    }
  }
  const SlideRecord& r = catalog_.at(slide_id);
  const auto path = catalog_.image_path(r);
  if (!std::filesystem::exists(path)) throw IoError("slide " + slide_id + ": image missing at " + path.string());
  auto img = std::make_shared<const RgbImage>(read_image(path.string()));
  std::lock_guard lock(mutex_);
  cache_.insert(cache_.begin(), {slide_id, img});
  if (cache_.size() > capacity_) cache_.resize(capacity_);
  return img;
}

RgbImage TileSource::read(const TileRef& tile) const {
  return slide_image(tile.slide_id)->crop(tile.x, tile.y, tile.size, tile.size);
}

std::string serialize_tiles_csv(std::span<const TileRef> tiles) {
  std::string out = "slide_id,x,y,size\n";
  for (const auto& t : tiles) {
    out += t.slide_id + "," + std::to_string(t.x) + "," + std::to_string(t.y) + "," + std::to_string(t.size) + "\n";
  }
  return out;
}

void save_tiles_csv(std::span<const TileRef> tiles, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << serialize_tiles_csv(tiles);
}

std::vector<TileRef> load_tiles_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<TileRef> tiles;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    const auto parts = split(line, ',');
    if (parts.size() != 4) throw Error(path.string() + " line " + std::to_string(line_no) + ": expected 4 columns");
    try {
      tiles.push_back({parts[0], std::stoi(parts[1]), std::stoi(parts[2]), std::stoi(parts[3])});
    } catch (const std::exception&) {
      throw Error(path.string() + " line " + std::to_string(line_no) + ": bad integer");
    }
  }
  return tiles;
}

}  // namespace slidekit
