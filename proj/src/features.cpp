#include "slidekit/features.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "slidekit/binary_io.hpp"
#include "slidekit/random.hpp"

namespace slidekit {

namespace {

constexpr int kRealBins = 1024;

struct Moments {
  double n = 0.0;
  Vec3<double> mean = Vec3<double>::Zero();
  Vec3<double> m2 = Vec3<double>::Zero();

  // Chan et al. pairwise update.
  void merge(const Moments& o) {
    if (o.n == 0.0) return;
    if (n == 0.0) {
      *this = o;
      return;
    }
    const double total = n + o.n;
    const Vec3<double> delta = o.mean - mean;
    mean += delta * (o.n / total);
    m2 += o.m2 + delta.cwiseProduct(delta) * (n * o.n / total);
    n = total;
  }
};

Moments moments_of(const PixelMatrix<double>& px) {
  Moments m;
  m.n = static_cast<double>(px.rows());
  if (px.rows() == 0) return m;
  m.mean = px.colwise().mean().transpose();
  m.m2 = (px.rowwise() - m.mean.transpose()).colwise().squaredNorm().transpose();
  return m;
}

}  // namespace

ChannelSummary summarize_channel(const Eigen::Ref<const Eigen::VectorXd>& values) {
  ChannelSummary s;
  const Eigen::Index n = values.size();
  if (n == 0) return s;
  s.mean = values.mean();
  s.std = std::sqrt((values.array() - s.mean).square().sum() / static_cast<double>(n));

  const double lo = values.minCoeff(), hi = values.maxCoeff();
  if (!(hi > lo)) {
    s.median = lo;
    return s;
  }
  std::array<std::int64_t, kRealBins> hist{};
  const double scale = kRealBins / (hi - lo);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int b = std::min(kRealBins - 1, static_cast<int>((values[i] - lo) * scale));
    ++hist[static_cast<std::size_t>(b)];
  }
  const std::int64_t rank = (n - 1) / 2;
  std::int64_t seen = 0;
  for (int b = 0; b < kRealBins; ++b) {
    seen += hist[static_cast<std::size_t>(b)];
    if (seen > rank) {
      s.median = std::clamp(lo + (b + 0.5) / scale, lo, hi);
      break;
    }
  }
  return s;
}

ChannelSummary summarize_byte_channel(const RgbImage& img, int channel) {
  ChannelSummary s;
  const std::size_t n = img.pixel_count();
  if (n == 0) return s;
  std::array<std::int64_t, 256> hist{};
  for (std::size_t i = 0; i < n; ++i) ++hist[img.pixels[i * 3 + static_cast<std::size_t>(channel)]];
  std::int64_t sum = 0, sumsq = 0;
  for (int v = 0; v < 256; ++v) {
    sum += hist[static_cast<std::size_t>(v)] * v;
    sumsq += hist[static_cast<std::size_t>(v)] * v * v;
  }
  const double dn = static_cast<double>(n);
  s.mean = static_cast<double>(sum) / dn;
  // Integer moments give an exact, order-free variance.
  const double var = (static_cast<double>(sumsq) * dn - static_cast<double>(sum) * static_cast<double>(sum)) / (dn * dn);
  s.std = std::sqrt(std::max(var, 0.0));
  const std::int64_t rank = static_cast<std::int64_t>((n - 1) / 2);
  std::int64_t seen = 0;
  for (int v = 0; v < 256; ++v) {
    seen += hist[static_cast<std::size_t>(v)];
    if (seen > rank) {
      s.median = v;
      break;
    }
  }
  return s;
}

FeatureVector features_36(const RgbImage& img, const StainMatrix& stains) {
  FeatureVector f;
  auto put = [&](int space, int channel, const ChannelSummary& s) {
    f[feature_index(space, channel, FeatureStat::Mean)] = s.mean;
    f[feature_index(space, channel, FeatureStat::Std)] = s.std;
    f[feature_index(space, channel, FeatureStat::Median)] = s.median;
  };
  for (int c = 0; c < 3; ++c) put(0, c, summarize_byte_channel(img, c));

  const ChannelImage lab = convert_color(img, ColorSpace::LAB);
  const ChannelImage hsv = convert_color(img, ColorSpace::HSV);
  const ChannelImage hed = stain_deconvolve(img, stains);
  for (int c = 0; c < 3; ++c) {
    put(1, c, summarize_channel(lab.pixels.col(c)));
    put(2, c, summarize_channel(hsv.pixels.col(c)));
    put(3, c, summarize_channel(hed.pixels.col(c)));
  }
  return f;
}

StainStats image_stain_stats(const RgbImage& img, const std::string& slide_id) {
  const Moments m = moments_of(convert_color(img, ColorSpace::LAlphaBeta).pixels);
  StainStats s;
  s.slide_id = slide_id;
  s.mean = m.mean;
  s.std = m.n > 0 ? (m.m2 / m.n).cwiseSqrt().eval() : Vec3<double>::Zero();
  s.patch_count = 1;
  return s;
}

StainStats slide_stain_stats(const TileSource& source, const std::string& slide_id, std::span<const TileRef> tiles,
                             int max_tiles, std::uint64_t seed) {
  if (tiles.empty()) throw Error("slide " + slide_id + ": no tissue tiles");
  if (max_tiles < 1) throw Error("max_tiles must be >= 1");
  Rng rng(seed ^ fnv1a64(slide_id));
  const auto picked = rng.sample_without_replacement(tiles.size(), static_cast<std::size_t>(max_tiles));

  Moments pooled;
  for (std::size_t idx : picked) {
    const RgbImage tile = source.read(tiles[idx]);
    pooled.merge(moments_of(convert_color(tile, ColorSpace::LAlphaBeta).pixels));
  }
  StainStats s;
  s.slide_id = slide_id;
  s.mean = pooled.mean;
  s.std = (pooled.m2 / pooled.n).cwiseSqrt();
  s.patch_count = static_cast<int>(picked.size());
  return s;
}

std::string serialize_stain_stats(const StainStatsTable& table) {
  std::ostringstream out;
  out.precision(17);
  out << "slide_id,patch_count,mean_l,mean_alpha,mean_beta,std_l,std_alpha,std_beta\n";
  for (const auto& [id, s] : table) {
    out << id << ',' << s.patch_count;
    for (int c = 0; c < 3; ++c) out << ',' << s.mean[c];
    for (int c = 0; c < 3; ++c) out << ',' << s.std[c];
    out << '\n';
  }
  return out.str();
}

void save_stain_stats(const StainStatsTable& table, const std::filesystem::path& path) {
  write_file_bytes(path.string(), serialize_stain_stats(table));
}

StainStatsTable load_stain_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  StainStatsTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    if (++line_no == 1 || line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> parts;
    while (std::getline(ls, field, ',')) parts.push_back(field);
    if (parts.size() != 8) throw Error(path.string() + " line " + std::to_string(line_no) + ": expected 8 columns");
    StainStats s;
    try {
      s.slide_id = parts[0];
      s.patch_count = std::stoi(parts[1]);
      for (int c = 0; c < 3; ++c) s.mean[c] = std::stod(parts[2 + c]);
      for (int c = 0; c < 3; ++c) s.std[c] = std::stod(parts[5 + c]);
    } catch (const std::exception&) {
      throw Error(path.string() + " line " + std::to_string(line_no) + ": bad number");
    }
    table[s.slide_id] = s;
  }
  return table;
}

// ---------------------------------------------------------------------------

std::string FeatureTable::serialize() const {
  ByteWriter w;
  w.raw("RVFV");
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(dim));
  w.u64(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    w.u32(keys[i].slide_index);
    w.u32(keys[i].x);
    w.u32(keys[i].y);
    for (int d = 0; d < dim; ++d) w.f32(values(static_cast<Eigen::Index>(i), d));
  }
  return w.take();
}

FeatureTable FeatureTable::deserialize(std::string_view bytes, const std::string& what) {
  ByteReader r(bytes, what);
  r.expect_magic("RVFV");
  if (r.u32() != kVersion) throw FormatError(what + ": unsupported version");
  FeatureTable t;
  t.dim = static_cast<int>(r.u32());
  const std::uint64_t count = r.u64();
  if (t.dim <= 0) throw FormatError(what + ": zero dimension");
  if (count > r.remaining() / (12 + 4 * static_cast<std::uint64_t>(t.dim))) throw FormatError(what + ": truncated payload");
  t.keys.resize(count);
  t.values.resize(static_cast<Eigen::Index>(count), t.dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    t.keys[i].slide_index = r.u32();
    t.keys[i].x = r.u32();
    t.keys[i].y = r.u32();
    for (int d = 0; d < t.dim; ++d) t.values(static_cast<Eigen::Index>(i), d) = r.f32();
  }
  if (!r.at_end()) throw FormatError(what + ": trailing bytes");
  return t;
}

void FeatureTable::save(const std::filesystem::path& path) const { write_file_bytes(path.string(), serialize()); }

FeatureTable FeatureTable::load(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path.string()), path.string());
}

FeatureTable compute_feature_table(const TileSource& source, std::span<const TileRef> tiles) {
  FeatureTable t;
  t.dim = kFeatureDim;
  t.keys.reserve(tiles.size());
  t.values.resize(static_cast<Eigen::Index>(tiles.size()), kFeatureDim);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto slide_index = source.catalog().index_of(tiles[i].slide_id);
    if (!slide_index) throw Error("unknown slide_id " + tiles[i].slide_id);
    t.keys.push_back({static_cast<std::uint32_t>(*slide_index), static_cast<std::uint32_t>(tiles[i].x),
                      static_cast<std::uint32_t>(tiles[i].y)});
    t.values.row(static_cast<Eigen::Index>(i)) = features_36(source.read(tiles[i])).cast<float>().transpose();
  }
  return t;
}

}  // namespace slidekit
