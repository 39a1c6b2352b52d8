#include "slidekit/cluster.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "slidekit/binary_io.hpp"
#include "slidekit/errors.hpp"
#include "slidekit/random.hpp"

namespace slidekit {

namespace {

double squared_distance(const Eigen::Ref<const RowMatrixXd>& a, Eigen::Index i, const Eigen::Ref<const RowMatrixXd>& b,
                        Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

// Assignment step; returns inertia summed in row order.
double assign(const Eigen::Ref<const RowMatrixXd>& points, const RowMatrixXd& centroids, std::vector<int>& labels,
              std::vector<double>& dist2) {
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_j = 0;
    for (Eigen::Index j = 0; j < centroids.rows(); ++j) {
      const double d = squared_distance(points, i, centroids, j);
      if (d < best) {
        best = d;
        best_j = static_cast<int>(j);
      }
    }
    labels[static_cast<std::size_t>(i)] = best_j;
    dist2[static_cast<std::size_t>(i)] = best;
    inertia += best;
  }
  return inertia;
}

RowMatrixXd kmeanspp_init(const Eigen::Ref<const RowMatrixXd>& points, int k, Rng& rng) {
  const Eigen::Index n = points.rows();
  RowMatrixXd centroids(k, points.cols());
  centroids.row(0) = points.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = squared_distance(points, i, centroids, 0);

  for (int j = 1; j < k; ++j) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc > target && d2[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
    }
    centroids.row(j) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], squared_distance(points, i, centroids, j));
    }
  }
  return centroids;
}

}  // namespace

ClusterModel kmeans_fit(const Eigen::Ref<const RowMatrixXd>& points, const KMeansOptions& opts) {
  const Eigen::Index n = points.rows();
  if (opts.k < 1) throw Error("k-means: k must be >= 1");
  if (n < opts.k) {
    throw Error("k-means: need at least k=" + std::to_string(opts.k) + " points, got " + std::to_string(n));
  }
  if (!points.allFinite()) throw Error("k-means: non-finite input");

  Rng rng(opts.seed);
  ClusterModel model;
  model.k = opts.k;
  model.centroids = kmeanspp_init(points, opts.k, rng);

  std::vector<int> labels(static_cast<std::size_t>(n));
  std::vector<double> dist2(static_cast<std::size_t>(n));
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    model.inertia_history.push_back(assign(points, model.centroids, labels, dist2));

    RowMatrixXd sums = RowMatrixXd::Zero(opts.k, points.cols());
    std::vector<std::int64_t> counts(static_cast<std::size_t>(opts.k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    RowMatrixXd next = model.centroids;
    for (int j = 0; j < opts.k; ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0) {
        next.row(j) = sums.row(j) / static_cast<double>(counts[static_cast<std::size_t>(j)]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      const auto far = std::max_element(dist2.begin(), dist2.end()) - dist2.begin();
      next.row(j) = points.row(far);
      dist2[static_cast<std::size_t>(far)] = 0.0;
    }
    double shift = 0.0;
    for (int j = 0; j < opts.k; ++j) shift = std::max(shift, (next.row(j) - model.centroids.row(j)).norm());
    model.centroids = std::move(next);
    model.iterations_run = iter + 1;
    if (shift < opts.tol) break;
  }
  model.inertia = assign(points, model.centroids, labels, dist2);
  model.inertia_history.push_back(model.inertia);
  return model;
}

std::vector<int> assign_nearest(const Eigen::Ref<const RowMatrixXd>& centroids, const Eigen::Ref<const RowMatrixXd>& points) {
  std::vector<int> labels(static_cast<std::size_t>(points.rows()));
  std::vector<double> dist2(labels.size());
  assign(points, centroids, labels, dist2);
  return labels;
}

std::vector<std::size_t> subsample_patches(std::span<const std::vector<std::size_t>> rows_by_slide, int n_per_slide,
                                           std::uint64_t seed) {
  if (n_per_slide < 1) throw Error("subsample: n_per_slide must be >= 1");
  std::vector<std::size_t> picked;
  for (std::size_t s = 0; s < rows_by_slide.size(); ++s) {
    const auto& rows = rows_by_slide[s];
    Rng rng(counter_hash(seed, s));
    for (std::size_t idx : rng.sample_without_replacement(rows.size(), static_cast<std::size_t>(n_per_slide))) {
      picked.push_back(rows[idx]);
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

std::vector<int> propagate_labels(const Eigen::Ref<const RowMatrixXd>& labeled, std::span<const int> labels,
                                  const Eigen::Ref<const RowMatrixXd>& queries, int knn) {
  if (labeled.rows() == 0) throw Error("propagate_labels: no labeled points");
  if (static_cast<std::size_t>(labeled.rows()) != labels.size()) throw Error("propagate_labels: label count mismatch");
  if (labeled.cols() != queries.cols()) throw Error("propagate_labels: dimension mismatch");
  if (knn < 1) throw Error("propagate_labels: knn must be >= 1");
  const auto k = static_cast<std::size_t>(std::min<Eigen::Index>(knn, labeled.rows()));

  std::vector<int> out(static_cast<std::size_t>(queries.rows()));
  std::vector<std::pair<double, std::size_t>> dist(static_cast<std::size_t>(labeled.rows()));
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    for (Eigen::Index i = 0; i < labeled.rows(); ++i) {
      dist[static_cast<std::size_t>(i)] = {(labeled.row(i) - queries.row(q)).squaredNorm(), static_cast<std::size_t>(i)};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::vector<std::pair<int, int>> votes;  // (label, count)
    for (std::size_t i = 0; i < k; ++i) {
      const int lbl = labels[dist[i].second];
      auto it = std::find_if(votes.begin(), votes.end(), [&](const auto& v) { return v.first == lbl; });
      if (it == votes.end()) {
        votes.emplace_back(lbl, 1);
      } else {
        ++it->second;
      }
    }
    auto best = votes.front();
    for (const auto& v : votes) {
      if (v.second > best.second || (v.second == best.second && v.first < best.first)) best = v;
    }
    out[static_cast<std::size_t>(q)] = best.first;
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string ClusterModel::serialize() const {
  ByteWriter w;
  w.raw("RVCM");
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(k));
  w.u32(static_cast<std::uint32_t>(centroids.cols()));
  for (Eigen::Index i = 0; i < centroids.rows(); ++i)
    for (Eigen::Index j = 0; j < centroids.cols(); ++j) w.f32(static_cast<float>(centroids(i, j)));
  w.f64(inertia);
  return w.take();
}

ClusterModel ClusterModel::deserialize(std::string_view bytes, const std::string& what) {
  ByteReader r(bytes, what);
  r.expect_magic("RVCM");
  if (r.u32() != kVersion) throw FormatError(what + ": unsupported version");
  ClusterModel m;
  m.k = static_cast<int>(r.u32());
  const auto dim = static_cast<Eigen::Index>(r.u32());
  if (static_cast<std::uint64_t>(m.k) * static_cast<std::uint64_t>(dim) * 4 + 8 != r.remaining()) {
    throw FormatError(what + ": payload size does not match k x dim");
  }
  m.centroids.resize(m.k, dim);
  for (Eigen::Index i = 0; i < m.k; ++i)
    for (Eigen::Index j = 0; j < dim; ++j) m.centroids(i, j) = r.f32();
  m.inertia = r.f64();
  return m;
}

void ClusterModel::save(const std::filesystem::path& path) const { write_file_bytes(path.string(), serialize()); }

ClusterModel ClusterModel::load(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path.string()), path.string());
}

// ---------------------------------------------------------------------------

namespace {

std::pair<int, int> parse_range(const std::string& tok, std::size_t line) {
  try {
    const auto dash = tok.find('-');
    std::size_t used = 0;
    if (dash == std::string::npos) {
      const int v = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return {v, v};
    }
    const int a = std::stoi(tok.substr(0, dash), &used);
    if (used != dash) throw std::invalid_argument(tok);
    const std::string rest = tok.substr(dash + 1);
    const int b = std::stoi(rest, &used);
    if (used != rest.size() || b < a) throw std::invalid_argument(tok);
    return {a, b};
  } catch (const std::exception&) {
    throw ConfigError("merge map line " + std::to_string(line) + ": bad id range \"" + tok + "\"");
  }
}

}  // namespace

MergeMap MergeMap::parse(const std::string& text) {
  MergeMap map;
  constexpr int kUnset = -2;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) { throw ConfigError("merge map line " + std::to_string(line_no) + ": " + msg); };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string directive;
    if (!(ls >> directive)) continue;
    if (directive == "raw_clusters") {
      if (!(ls >> map.raw_clusters) || map.raw_clusters < 1) fail("raw_clusters needs a positive count");
      map.target.assign(static_cast<std::size_t>(map.raw_clusters), kUnset);
    } else if (directive == "meta") {
      int id = -1;
      double weight = -1.0;
      if (!(ls >> id >> weight) || id < 0 || !(weight >= 0.0)) fail("meta needs '<id> <weight >= 0> [description]'");
      std::string desc;
      std::getline(ls, desc);
      desc.erase(0, desc.find_first_not_of(" \t"));
      while (!desc.empty() && (desc.back() == ' ' || desc.back() == '\t' || desc.back() == '\r')) desc.pop_back();
      if (static_cast<std::size_t>(id) >= map.meta_weights.size()) {
        map.meta_weights.resize(static_cast<std::size_t>(id) + 1, -1.0);
        map.meta_descriptions.resize(static_cast<std::size_t>(id) + 1);
      }
      if (map.meta_weights[static_cast<std::size_t>(id)] >= 0.0) fail("meta " + std::to_string(id) + " defined twice");
      map.meta_weights[static_cast<std::size_t>(id)] = weight;
      map.meta_descriptions[static_cast<std::size_t>(id)] = desc;
    } else if (directive == "map" || directive == "drop") {
      if (map.target.empty()) fail("raw_clusters must precede map/drop");
      std::vector<std::string> toks;
      for (std::string t; ls >> t;) toks.push_back(t);
      int meta = kDropped;
      if (directive == "map") {
        if (toks.size() < 2) fail("map needs '<ids...> <meta>'");
        const std::string m = toks.back();
        toks.pop_back();
        if (m == "DROP") {
          meta = kDropped;
        } else {
          auto [a, b] = parse_range(m, line_no);
          if (a != b || a < 0) fail("bad meta id " + m);
          meta = a;
        }
      } else if (toks.empty()) {
        fail("drop needs ids");
      }
      for (const auto& t : toks) {
        auto [a, b] = parse_range(t, line_no);
        if (a < 0 || b >= map.raw_clusters) fail("raw id out of range in " + t);
        for (int id = a; id <= b; ++id) {
          if (map.target[static_cast<std::size_t>(id)] != kUnset) fail("raw id " + std::to_string(id) + " mapped twice");
          map.target[static_cast<std::size_t>(id)] = meta;
        }
      }
    } else {
      fail("unknown directive " + directive);
    }
  }
  map.validate();
  return map;
}

void MergeMap::validate() const {
  if (raw_clusters < 1 || target.size() != static_cast<std::size_t>(raw_clusters)) {
    throw ConfigError("merge map: raw_clusters missing");
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] != kDropped && (target[i] < 0 || target[i] >= meta_count())) {
      throw ConfigError("merge map: raw id " + std::to_string(i) + " is unmapped or maps to an undefined meta cluster");
    }
  }
  for (std::size_t m = 0; m < meta_weights.size(); ++m) {
    if (meta_weights[m] < 0.0) throw ConfigError("merge map: meta " + std::to_string(m) + " not defined");
  }
  if (std::none_of(target.begin(), target.end(), [](int t) { return t != kDropped; })) {
    throw ConfigError("merge map: every raw cluster is dropped");
  }
  if (std::none_of(meta_weights.begin(), meta_weights.end(), [](double w) { return w > 0.0; })) {
    throw ConfigError("merge map: all meta weights are zero");
  }
}

MergeMap MergeMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open merge map " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string MergeMap::serialize() const {
  std::ostringstream out;
  out.precision(17);
  out << "raw_clusters " << raw_clusters << '\n';
  for (int m = 0; m < meta_count(); ++m) {
    out << "meta " << m << ' ' << meta_weights[static_cast<std::size_t>(m)];
    if (!meta_descriptions[static_cast<std::size_t>(m)].empty()) out << ' ' << meta_descriptions[static_cast<std::size_t>(m)];
    out << '\n';
  }
  for (int id = 0; id < raw_clusters; ++id) {
    const int t = target[static_cast<std::size_t>(id)];
    if (t == kDropped) {
      out << "drop " << id << '\n';
    } else {
      out << "map " << id << ' ' << t << '\n';
    }
  }
  return out.str();
}

std::vector<int> apply_merge_map(std::span<const int> raw_labels, const MergeMap& map) {
  std::vector<int> out(raw_labels.size());
  for (std::size_t i = 0; i < raw_labels.size(); ++i) {
    const int id = raw_labels[i];
    if (id < 0 || id >= map.raw_clusters) throw Error("merge map has no entry for raw cluster " + std::to_string(id));
    out[i] = map.target[static_cast<std::size_t>(id)];
  }
  return out;
}

}  // namespace slidekit
