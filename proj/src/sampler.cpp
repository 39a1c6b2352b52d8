#include "slidekit/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "slidekit/cluster.hpp"
#include "slidekit/random.hpp"

namespace slidekit {

double WeightTable::group_weight(int g) const {
  auto it = group_overrides.find(g);
  return it == group_overrides.end() ? group_default : it->second;
}

double WeightTable::meta_weight(int c) const {
  auto it = meta_overrides.find(c);
  return it == meta_overrides.end() ? meta_default : it->second;
}

WeightTable WeightTable::parse(const std::string& text) {
  WeightTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) { throw ConfigError("weights line " + std::to_string(line_no) + ": " + msg); };
  auto weight = [&](std::istringstream& ls) {
    double w = -1.0;
    if (!(ls >> w) || !(w >= 0.0) || !std::isfinite(w)) fail("weight must be a finite number >= 0");
    return w;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "mode") {
      std::string m;
      ls >> m;
      if (m == "product") {
        t.mode = SamplingMode::Product;
      } else if (m == "two-stage") {
        t.mode = SamplingMode::TwoStage;
      } else {
        fail("mode must be product or two-stage");
      }
    } else if (key == "group_default") {
      t.group_default = weight(ls);
    } else if (key == "meta_default") {
      t.meta_default = weight(ls);
    } else if (key == "group" || key == "meta") {
      int id = -1;
      if (!(ls >> id) || id < 0) fail("expected '<id> <weight>'");
      (key == "group" ? t.group_overrides : t.meta_overrides)[id] = weight(ls);
    } else {
      fail("unknown key " + key);
    }
  }
  return t;
}

WeightTable WeightTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open weights " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

WeightTable WeightTable::from_vectors(std::span<const double> groups, std::span<const double> metas) {
  WeightTable t;
  t.group_default = 0.0;
  t.meta_default = 0.0;
  for (std::size_t i = 0; i < groups.size(); ++i) t.group_overrides[static_cast<int>(i)] = groups[i];
  for (std::size_t i = 0; i < metas.size(); ++i) t.meta_overrides[static_cast<int>(i)] = metas[i];
  return t;
}

void SamplerIndex::add(const BucketKey& key, TileRef tile) {
  buckets_[key].push_back(std::move(tile));
  ++tile_count_;
}

SamplerIndex build_index(const Catalog& catalog, std::span<const TileRef> tiles, std::span<const int> meta_labels) {
  if (tiles.size() != meta_labels.size()) throw Error("build_index: tile and label counts differ");
  SamplerIndex index;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (meta_labels[i] == kDropped) continue;
    const SlideRecord& r = catalog.at(tiles[i].slide_id);
    if (r.group_id < 0) throw Error("build_index: slide " + r.slide_id + " has no group assigned");
    index.add({r.group_id, meta_labels[i]}, tiles[i]);
  }
  return index;
}

std::vector<double> target_distribution(const SamplerIndex& index, const WeightTable& weights) {
  std::vector<double> p;
  p.reserve(index.bucket_count());
  if (weights.mode == SamplingMode::Product) {
    for (const auto& [key, tiles] : index.buckets()) {
      p.push_back(tiles.empty() ? 0.0 : weights.group_weight(key.first) * weights.meta_weight(key.second));
    }
  } else {
    // Conditional meta mass per group, then group mass over groups that have any.
    std::map<int, double> meta_mass;
    for (const auto& [key, tiles] : index.buckets()) {
      if (!tiles.empty()) meta_mass[key.first] += weights.meta_weight(key.second);
    }
    double group_total = 0.0;
    for (const auto& [g, mass] : meta_mass) {
      if (mass > 0.0) group_total += weights.group_weight(g);
    }
    for (const auto& [key, tiles] : index.buckets()) {
      const double mass = meta_mass[key.first];
      if (tiles.empty() || !(mass > 0.0) || !(group_total > 0.0)) {
        p.push_back(0.0);
        continue;
      }
      p.push_back(weights.group_weight(key.first) / group_total * weights.meta_weight(key.second) / mass);
    }
  }
  double total = 0.0;
  for (double v : p) total += v;
  if (!(total > 0.0)) throw Error("weight mass on empty buckets only");
  for (double& v : p) v /= total;
  return p;
}

TileStream::TileStream(const SamplerIndex& index, const WeightTable& weights, std::uint64_t seed, std::uint64_t offset)
    : probabilities_(target_distribution(index, weights)), seed_(seed), position_(offset) {
  for (const auto& [key, tiles] : index.buckets()) buckets_.push_back(&tiles);
  cumulative_.resize(probabilities_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < probabilities_.size(); ++i) {
    acc += probabilities_[i];
    cumulative_[i] = acc;
  }
}

std::size_t TileStream::bucket_at(std::uint64_t i) const {
  const double u = bits_to_unit(counter_hash(seed_, 2 * i)) * cumulative_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  // Zero-mass buckets repeat their predecessor's cumulative value and are
  // never the upper bound.
  return std::min(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
}

const TileRef& TileStream::at(std::uint64_t i) const {
  const auto& tiles = *buckets_[bucket_at(i)];
  return tiles[bits_to_index(counter_hash(seed_, 2 * i + 1), tiles.size())];
}

const TileRef& TileStream::next() { return at(position_++); }

std::vector<TileRef> draw(const SamplerIndex& index, const WeightTable& weights, std::size_t n, std::uint64_t seed) {
  TileStream stream(index, weights, seed);
  std::vector<TileRef> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(stream.next());
  return out;
}

}  // namespace slidekit
