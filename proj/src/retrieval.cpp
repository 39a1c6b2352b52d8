#include "slidekit/retrieval.hpp"

#include <json.hpp>

#include "slidekit/binary_io.hpp"
#include "slidekit/features.hpp"
#include "slidekit/random.hpp"

namespace slidekit {

Eigen::VectorXf FeatureEmbedder::embed(const RgbImage& tile) const {
  FeatureVector f = features_36(tile);
  const double n = f.norm();
  if (n > 0.0) f /= n;
  return f.cast<float>();
}

RandomProjectionEmbedder::RandomProjectionEmbedder(int dim, std::uint64_t seed) {
  if (dim < 1) throw Error("embedder dim must be >= 1");
  Rng rng(seed);
  projection_.resize(dim, kFeatureDim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (Eigen::Index i = 0; i < projection_.rows(); ++i)
    for (Eigen::Index j = 0; j < projection_.cols(); ++j) projection_(i, j) = rng.normal() * scale;
}

Eigen::VectorXf RandomProjectionEmbedder::embed(const RgbImage& tile) const {
  FeatureVector f = features_36(tile);
  const double n = f.norm();
  if (n > 0.0) f /= n;
  return (projection_ * f).cast<float>();
}

std::optional<std::size_t> SlideEmbeddings::row_of(const TileCoord& c) const {
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (coords[i] == c) return i;
  }
  return std::nullopt;
}

std::size_t EmbeddingStore::tile_count() const {
  std::size_t n = 0;
  for (const auto& s : slides_) n += s.coords.size();
  return n;
}

void EmbeddingStore::add(SlideEmbeddings slide) {
  if (slide.vectors.rows() != static_cast<Eigen::Index>(slide.coords.size())) {
    throw Error("store: slide " + slide.slide_id + " has mismatched coordinate and vector counts");
  }
  if (slide.vectors.cols() != dim_) throw Error("store: slide " + slide.slide_id + " has wrong embedding dim");
  if (by_id_.count(slide.slide_id)) throw Error("store: duplicate slide_id " + slide.slide_id);
  by_id_.emplace(slide.slide_id, slides_.size());
  slides_.push_back(std::move(slide));
}

const SlideEmbeddings* EmbeddingStore::find(const std::string& slide_id) const {
  auto it = by_id_.find(slide_id);
  return it == by_id_.end() ? nullptr : &slides_[it->second];
}

std::string EmbeddingStore::serialize() const {
  ByteWriter w;
  w.raw("RVES");
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(dim_));
  w.u32(static_cast<std::uint32_t>(slides_.size()));
  for (const auto& s : slides_) {
    w.str16(s.slide_id);
    w.str16(s.diagnosis);
    w.u32(static_cast<std::uint32_t>(s.coords.size()));
    for (const auto& c : s.coords) {
      w.u32(c.x);
      w.u32(c.y);
    }
    for (Eigen::Index i = 0; i < s.vectors.rows(); ++i)
      for (Eigen::Index j = 0; j < s.vectors.cols(); ++j) w.f32(s.vectors(i, j));
  }
  return w.take();
}

EmbeddingStore EmbeddingStore::deserialize(std::string_view bytes, const std::string& what) {
  ByteReader r(bytes, what);
  r.expect_magic("RVES");
  if (r.u32() != kVersion) throw FormatError(what + ": unsupported version");
  const int dim = static_cast<int>(r.u32());
  if (dim <= 0) throw FormatError(what + ": zero dimension");
  const std::uint32_t count = r.u32();
  EmbeddingStore store(dim);
  for (std::uint32_t s = 0; s < count; ++s) {
    SlideEmbeddings slide;
    slide.slide_id = r.str16();
    slide.diagnosis = r.str16();
    const std::uint32_t tiles = r.u32();
    if (tiles > r.remaining() / (8 + 4 * static_cast<std::uint64_t>(dim))) throw FormatError(what + ": truncated payload");
    slide.coords.resize(tiles);
    for (auto& c : slide.coords) {
      c.x = r.u32();
      c.y = r.u32();
    }
    slide.vectors.resize(tiles, dim);
    for (Eigen::Index i = 0; i < slide.vectors.rows(); ++i)
      for (Eigen::Index j = 0; j < dim; ++j) slide.vectors(i, j) = r.f32();
    try {
      store.add(std::move(slide));
    } catch (const Error& e) {
      throw FormatError(what + ": " + e.what());
    }
  }
  if (!r.at_end()) throw FormatError(what + ": trailing bytes");
  return store;
}

void EmbeddingStore::save(const std::filesystem::path& path) const { write_file_bytes(path.string(), serialize()); }

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path.string()), path.string());
}

EmbeddingStore build_store(const Catalog& catalog, const std::map<std::string, std::vector<TileRef>>& tiles_by_slide,
                           const Embedder& embedder, const TileSource& source, BuildReport* report,
                           const std::set<std::string>& exclude) {
  if (embedder.dim() < 1) throw Error("build_store: embedder dim must be > 0");
  EmbeddingStore store(embedder.dim());
  for (const auto& rec : catalog) {
    if (exclude.count(rec.slide_id)) continue;
    auto it = tiles_by_slide.find(rec.slide_id);
    if (it == tiles_by_slide.end() || it->second.empty()) {
      if (report) report->skipped.push_back(rec.slide_id);
      continue;
    }
    SlideEmbeddings s;
    s.slide_id = rec.slide_id;
    s.diagnosis = rec.diagnosis.value_or("");
    s.vectors.resize(static_cast<Eigen::Index>(it->second.size()), embedder.dim());
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      const TileRef& t = it->second[i];
      s.coords.push_back({static_cast<std::uint32_t>(t.x), static_cast<std::uint32_t>(t.y)});
      s.vectors.row(static_cast<Eigen::Index>(i)) = embedder.embed(source.read(t)).transpose();
    }
    store.add(std::move(s));
  }
  return store;
}

// ---------------------------------------------------------------------------

QueryROI QueryROI::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("ROI: malformed JSON (") + e.what() + ")");
  }
  if (!j.is_object() || !j.contains("slide_id") || !j["slide_id"].is_string()) throw Error("ROI: missing slide_id");
  QueryROI roi;
  roi.slide_id = j["slide_id"].get<std::string>();
  const auto& tiles = j.contains("roi") ? j["roi"] : j.value("tiles", nlohmann::json::array());
  if (!tiles.is_array()) throw Error("ROI: tiles must be an array");
  for (const auto& t : tiles) {
    if (!t.is_object() || !t.contains("x") || !t.contains("y") || !t["x"].is_number_unsigned() ||
        !t["y"].is_number_unsigned()) {
      throw Error("ROI: each tile needs non-negative integer x and y");
    }
    roi.tiles.push_back({t["x"].get<std::uint32_t>(), t["y"].get<std::uint32_t>()});
  }
  return roi;
}

std::string QueryROI::to_json() const {
  nlohmann::json j;
  j["slide_id"] = slide_id;
  j["tiles"] = nlohmann::json::array();
  for (const auto& t : tiles) j["tiles"].push_back({{"x", t.x}, {"y", t.y}});
  return j.dump();
}

EmbeddingMatrix roi_vectors(const EmbeddingStore& store, const QueryROI& roi) {
  if (roi.tiles.empty()) throw Error("ROI is empty");
  const SlideEmbeddings* slide = store.find(roi.slide_id);
  if (!slide) throw Error("ROI slide " + roi.slide_id + " not in store");
  EmbeddingMatrix out(static_cast<Eigen::Index>(roi.tiles.size()), store.dim());
  for (std::size_t i = 0; i < roi.tiles.size(); ++i) {
    const auto row = slide->row_of(roi.tiles[i]);
    if (!row) {
      throw Error("ROI tile (" + std::to_string(roi.tiles[i].x) + "," + std::to_string(roi.tiles[i].y) +
                  ") is not in the tile grid of " + roi.slide_id);
    }
    out.row(static_cast<Eigen::Index>(i)) = slide->vectors.row(static_cast<Eigen::Index>(*row));
  }
  return out;
}

RankedResult query_topn(const EmbeddingStore& store, const QueryROI& roi, const QueryOptions& opts) {
  return query_topn(store, roi_vectors(store, roi), roi.slide_id, opts);
}

RankedResult query_topn(const EmbeddingStore& store, const EmbeddingMatrix& roi, const std::string& query_slide,
                        const QueryOptions& opts) {
  if (store.empty()) throw Error("query: embedding store is empty");
  if (roi.rows() < 1) throw Error("ROI is empty");
  if (roi.cols() != store.dim()) throw Error("query: ROI dimension does not match store");
  if (opts.k < 1) throw Error("query: k must be >= 1");
  if (opts.top_n < 1) throw Error("query: top_n must be >= 1");

  const Eigen::MatrixXd roi_n = normalized_rows(roi);
  RankedResult result;
  result.query_slide = query_slide;
  for (const auto& cand : store.slides()) {
    if (!opts.include_self && cand.slide_id == query_slide) continue;
    if (cand.vectors.rows() == 0) continue;
    const Eigen::MatrixXd cos =
        (roi_n * normalized_rows(cand.vectors).transpose()).cwiseMax(-1.0).cwiseMin(1.0);
    RankedEntry e;
    e.slide_id = cand.slide_id;
    e.diagnosis = cand.diagnosis;
    e.score = slide_score_from_cosines(cos, opts.k);
    if (opts.with_maps) {
      e.coords = cand.coords;
      const Eigen::VectorXd best = cos.colwise().maxCoeff().transpose();
      e.similarity.assign(best.data(), best.data() + best.size());
    }
    result.entries.push_back(std::move(e));
  }
  std::stable_sort(result.entries.begin(), result.entries.end(), [](const RankedEntry& a, const RankedEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.slide_id < b.slide_id;
  });
  if (result.entries.size() > static_cast<std::size_t>(opts.top_n)) result.entries.resize(static_cast<std::size_t>(opts.top_n));
  return result;
}

std::vector<double> topk_accuracy(std::span<const RankedResult> results, std::span<const std::string> truths,
                                  std::span<const int> ks, const std::set<std::string>& known_labels) {
  if (results.size() != truths.size()) throw Error("topk_accuracy: result and label counts differ");
  if (results.empty()) throw Error("topk_accuracy: no queries");
  for (const auto& t : truths) {
    if (!known_labels.count(t)) throw Error("topk_accuracy: unknown diagnosis label \"" + t + "\"");
  }
  std::vector<double> acc;
  for (int k : ks) {
    if (k < 1) throw Error("topk_accuracy: k must be >= 1");
    std::size_t hits = 0;
    for (std::size_t q = 0; q < results.size(); ++q) {
      const auto& entries = results[q].entries;
      if (entries.size() < static_cast<std::size_t>(k)) {
        throw Error("topk_accuracy: query " + std::to_string(q) + " has fewer than " + std::to_string(k) + " results");
      }
      for (int i = 0; i < k; ++i) {
        if (entries[static_cast<std::size_t>(i)].diagnosis == truths[q]) {
          ++hits;
          break;
        }
      }
    }
    acc.push_back(static_cast<double>(hits) / static_cast<double>(results.size()));
  }
  return acc;
}

}  // namespace slidekit
