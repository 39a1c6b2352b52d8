#include "cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "slidekit/augment.hpp"
#include "slidekit/catalog.hpp"
#include "slidekit/cluster.hpp"
#include "slidekit/errors.hpp"
#include "slidekit/features.hpp"
#include "slidekit/pca.hpp"
#include "slidekit/probe.hpp"
#include "slidekit/random.hpp"
#include "slidekit/retrieval.hpp"
#include "slidekit/sampler.hpp"
#include "slidekit/service.hpp"
#include "slidekit/synth.hpp"

namespace slidekit::cli {

namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

// "-" or empty means stdout.
void emit(std::ostream& out, const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_text(path, text);
  }
}

std::string row_labels_csv(std::span<const int> labels) {
  std::string s = "row,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) s += std::to_string(i) + "," + std::to_string(labels[i]) + "\n";
  return s;
}

// Dense per-row labels (negative ids allowed); every row 0..n-1 must appear.
std::vector<int> read_row_labels(const fs::path& path, std::size_t n) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<int> labels(n, 0);
  std::vector<bool> seen(n, false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("row", 0) == 0) continue;
    if (line.empty()) continue;
    std::istringstream ls(line);
    long long row = -1;
    int label = 0;
    char comma = 0;
    if (!(ls >> row >> comma >> label) || comma != ',' || row < 0) {
      throw FormatError(path.string() + " line " + std::to_string(line_no) + ": expected row,label");
    }
    if (static_cast<std::size_t>(row) >= n) {
      throw FormatError(path.string() + " line " + std::to_string(line_no) + ": row " + std::to_string(row) +
                        " out of range (" + std::to_string(n) + " rows)");
    }
    labels[static_cast<std::size_t>(row)] = label;
    seen[static_cast<std::size_t>(row)] = true;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen[i]) throw FormatError(path.string() + ": no label for row " + std::to_string(i));
  }
  return labels;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

RowMatrixXd to_double(const FeatureTable& t) { return t.values.cast<double>(); }

std::vector<std::vector<std::size_t>> rows_by_slide(const FeatureTable& t) {
  std::map<std::uint32_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < t.keys.size(); ++i) groups[t.keys[i].slide_index].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  for (auto& [_, rows] : groups) out.push_back(std::move(rows));
  return out;
}

RowMatrixXd gather_rows(const RowMatrixXd& m, std::span<const std::size_t> rows) {
  RowMatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

std::map<std::string, std::vector<TileRef>> tiles_by_slide(std::span<const TileRef> tiles) {
  std::map<std::string, std::vector<TileRef>> out;
  for (const auto& t : tiles) out[t.slide_id].push_back(t);
  return out;
}

EmbeddingStore store_from_table(const FeatureTable& table, const Catalog& catalog) {
  EmbeddingStore store(table.dim);
  std::map<std::uint32_t, std::vector<std::size_t>> rows;
  for (std::size_t i = 0; i < table.keys.size(); ++i) rows[table.keys[i].slide_index].push_back(i);
  for (const auto& [slide_index, idx] : rows) {
    if (slide_index >= catalog.size()) {
      throw FormatError("table row refers to slide index " + std::to_string(slide_index) + " beyond the catalog");
    }
    SlideEmbeddings s;
    s.slide_id = catalog[slide_index].slide_id;
    s.diagnosis = catalog[slide_index].diagnosis.value_or("");
    s.vectors.resize(static_cast<Eigen::Index>(idx.size()), table.dim);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      s.coords.push_back({table.keys[idx[i]].x, table.keys[idx[i]].y});
      s.vectors.row(static_cast<Eigen::Index>(i)) = table.values.row(static_cast<Eigen::Index>(idx[i]));
    }
    store.add(std::move(s));
  }
  return store;
}

FeatureTable table_from_store(const EmbeddingStore& store, const Catalog& catalog) {
  FeatureTable t;
  t.dim = store.dim();
  t.values.resize(static_cast<Eigen::Index>(store.tile_count()), store.dim());
  Eigen::Index row = 0;
  for (const auto& s : store.slides()) {
    const auto idx = catalog.index_of(s.slide_id);
    if (!idx) throw FormatError("store slide " + s.slide_id + " is not in the catalog");
    for (std::size_t i = 0; i < s.coords.size(); ++i, ++row) {
      t.keys.push_back({static_cast<std::uint32_t>(*idx), s.coords[i].x, s.coords[i].y});
      t.values.row(row) = s.vectors.row(static_cast<Eigen::Index>(i));
    }
  }
  return t;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"slidekit: slide curation, balanced sampling and reference-case search", "slidekit"};
  app.require_subcommand(1);
  app.fallthrough(false);
  std::map<CLI::App*, std::function<void()>> actions;

  // --- ingest
  std::string manifest, groups_path, out_manifest, tiles_path, out_path;
  TileOptions topts;
  MaskParams mparams;
  {
    auto* c = app.add_subcommand("ingest", "Assign groups, detect tissue and enumerate tiles");
    c->add_option("--manifest", manifest, "Slide manifest (JSON Lines)")->required();
    c->add_option("--groups", groups_path, "Group rules file")->required();
    c->add_option("--out-manifest", out_manifest, "Manifest with group_id filled in")->required();
    c->add_option("--tiles", tiles_path, "Output tile list CSV")->required();
    c->add_option("--tile-size", topts.size, "Tile edge in pixels")->capture_default_str();
    c->add_option("--stride", topts.stride, "Tile stride in pixels")->capture_default_str();
    c->add_option("--min-tissue", topts.min_tissue, "Minimum tissue fraction per tile")->capture_default_str();
    c->add_option("--s-min", mparams.s_min, "Minimum saturation for tissue")->capture_default_str();
    c->add_option("--v-max", mparams.v_max, "Maximum value (brightness) for tissue")->capture_default_str();
    c->add_option("--downsample", mparams.downsample, "Mask block size in pixels")->capture_default_str();
    actions[c] = [&] {
      Catalog catalog = assign_groups(load_manifest(manifest), GroupRules::load(groups_path));
      std::vector<TileRef> tiles;
      std::set<int> used;
      for (const auto& r : catalog) {
        const RgbImage img = read_image(catalog.image_path(r).string());
        const auto t = enumerate_tiles(r, compute_tissue_mask(img, mparams), topts);
        tiles.insert(tiles.end(), t.begin(), t.end());
        used.insert(r.group_id);
      }
      const fs::path out_dir_abs = fs::absolute(fs::path(out_manifest)).parent_path();
      for (std::size_t i = 0; i < catalog.size(); ++i) {
        catalog[i].image_path =
            fs::relative(fs::absolute(catalog.image_path(catalog[i])), out_dir_abs).generic_string();
      }
      save_manifest(catalog, out_manifest);
      save_tiles_csv(tiles, tiles_path);
      out << "slides " << catalog.size() << "\ngroups " << used.size() << "\ntiles " << tiles.size() << "\n";
    };
  }

  // --- features
  std::string features_path;
  {
    auto* c = app.add_subcommand("features", "Compute 36 color statistics per tile");
    c->add_option("--manifest", manifest, "Slide manifest")->required();
    c->add_option("--tiles", tiles_path, "Tile list CSV")->required();
    c->add_option("--out", features_path, "Output feature table (RVFV)")->required();
    actions[c] = [&] {
      const Catalog catalog = load_manifest(manifest);
      const TileSource source(catalog);
      const auto tiles = load_tiles_csv(tiles_path);
      compute_feature_table(source, tiles).save(features_path);
      out << "rows " << tiles.size() << "\n";
    };
  }

  // --- stats
  std::string stats_path;
  int max_tiles = 500;
  std::uint64_t seed = 0;
  {
    auto* c = app.add_subcommand("stats", "Per-slide staining statistics for stain transfer");
    c->add_option("--manifest", manifest, "Slide manifest")->required();
    c->add_option("--tiles", tiles_path, "Tile list CSV")->required();
    c->add_option("--out", stats_path, "Output statistics CSV")->required();
    c->add_option("--max-tiles", max_tiles, "Tiles sampled per slide")->capture_default_str();
    c->add_option("--seed", seed, "Random seed")->capture_default_str();
    actions[c] = [&] {
      const Catalog catalog = load_manifest(manifest);
      const TileSource source(catalog);
      StainStatsTable table;
      for (const auto& [id, tiles] : tiles_by_slide(load_tiles_csv(tiles_path))) {
        table[id] = slide_stain_stats(source, id, tiles, max_tiles, seed);
      }
      save_stain_stats(table, stats_path);
      out << "slides " << table.size() << "\n";
    };
  }

  // --- cluster
  std::string model_path;
  KMeansOptions kopts;
  int per_slide = 500;
  {
    auto* c = app.add_subcommand("cluster", "k-means on a per-slide subsample of tile features");
    c->add_option("--features", features_path, "Feature table (RVFV)")->required();
    c->add_option("--out", model_path, "Output cluster model (RVCM)")->required();
    c->add_option("--k", kopts.k, "Number of clusters")->capture_default_str();
    c->add_option("--max-iter", kopts.max_iter, "Maximum Lloyd iterations")->capture_default_str();
    c->add_option("--tol", kopts.tol, "Centroid shift tolerance")->capture_default_str();
    c->add_option("--per-slide", per_slide, "Tiles subsampled per slide")->capture_default_str();
    c->add_option("--seed", seed, "Random seed")->capture_default_str();
    actions[c] = [&] {
      const FeatureTable table = FeatureTable::load(features_path);
      const RowMatrixXd all = to_double(table);
      const auto groups = rows_by_slide(table);
      const auto rows = subsample_patches(groups, per_slide, seed);
      kopts.seed = seed;
      const ClusterModel model = kmeans_fit(gather_rows(all, rows), kopts);
      model.save(model_path);
      out << "k " << model.k << "\nsubsample " << rows.size() << "\niterations " << model.iterations_run
          << "\ninertia " << fmt(model.inertia) << "\n";
    };
  }

  // --- propagate
  std::string labels_path;
  int knn = 1;
  {
    auto* c = app.add_subcommand("propagate", "Label every tile by kNN vote from the clustered subsample");
    c->add_option("--features", features_path, "Feature table (RVFV)")->required();
    c->add_option("--model", model_path, "Cluster model (RVCM)")->required();
    c->add_option("--out", labels_path, "Output raw cluster labels CSV (row,label)")->required();
    c->add_option("--knn", knn, "Neighbours in the vote")->capture_default_str();
    c->add_option("--per-slide", per_slide, "Tiles subsampled per slide (as used for cluster)")->capture_default_str();
    c->add_option("--seed", seed, "Random seed (as used for cluster)")->capture_default_str();
    actions[c] = [&] {
      const FeatureTable table = FeatureTable::load(features_path);
      const ClusterModel model = ClusterModel::load(model_path);
      const RowMatrixXd all = to_double(table);
      const auto rows = subsample_patches(rows_by_slide(table), per_slide, seed);
      const RowMatrixXd labeled = gather_rows(all, rows);
      const auto seeds = assign_nearest(model.centroids, labeled);
      write_text(labels_path, row_labels_csv(propagate_labels(labeled, seeds, all, knn)));
      out << "rows " << all.rows() << "\n";
    };
  }

  // --- merge
  std::string map_path;
  {
    auto* c = app.add_subcommand("merge", "Map raw cluster labels to meta clusters");
    c->add_option("--labels", labels_path, "Raw cluster labels CSV")->required();
    c->add_option("--map", map_path, "Merge map file")->required();
    c->add_option("--out", out_path, "Output meta labels CSV (-1 = dropped)")->required();
    actions[c] = [&] {
      const MergeMap map = MergeMap::load(map_path);
      std::vector<std::pair<std::size_t, int>> rows;
      std::size_t n = 0;
      {
        std::ifstream in(labels_path);
        if (!in) throw IoError("cannot open " + labels_path);
        std::string line;
        while (std::getline(in, line)) n += line.empty() ? 0 : 1;
      }
      const auto raw = read_row_labels(labels_path, n > 0 ? n - 1 : 0);
      const auto meta = apply_merge_map(raw, map);
      write_text(out_path, row_labels_csv(meta));
      std::set<int> present(meta.begin(), meta.end());
      present.erase(kDropped);
      out << "rows " << meta.size() << "\nmeta_present " << present.size() << "\ndropped "
          << std::count(meta.begin(), meta.end(), kDropped) << "\n";
    };
  }

  // --- index / sample
  std::string meta_path, weights_path;
  std::size_t n_draws = 1000;
  std::uint64_t offset = 0;
  auto load_index = [&](Catalog& catalog) {
    catalog = load_manifest(manifest);
    const auto tiles = load_tiles_csv(tiles_path);
    return build_index(catalog, tiles, read_row_labels(meta_path, tiles.size()));
  };
  {
    auto* c = app.add_subcommand("index", "Bucket tiles by (group, meta cluster) and report target probabilities");
    c->add_option("--manifest", manifest, "Manifest with group ids")->required();
    c->add_option("--tiles", tiles_path, "Tile list CSV")->required();
    c->add_option("--meta", meta_path, "Meta labels CSV")->required();
    c->add_option("--weights", weights_path, "Weight table")->required();
    c->add_option("--out", out_path, "Output CSV (default stdout)");
    actions[c] = [&] {
      Catalog catalog;
      const SamplerIndex index = load_index(catalog);
      const auto p = target_distribution(index, WeightTable::load(weights_path));
      std::string csv = "group,meta,tiles,probability\n";
      std::size_t i = 0;
      for (const auto& [key, tiles] : index.buckets()) {
        csv += std::to_string(key.first) + "," + std::to_string(key.second) + "," + std::to_string(tiles.size()) + "," +
               fmt(p[i++]) + "\n";
      }
      emit(out, out_path, csv);
    };
  }
  {
    auto* c = app.add_subcommand("sample", "Draw a deterministic weighted tile stream");
    c->add_option("--manifest", manifest, "Manifest with group ids")->required();
    c->add_option("--tiles", tiles_path, "Tile list CSV")->required();
    c->add_option("--meta", meta_path, "Meta labels CSV")->required();
    c->add_option("--weights", weights_path, "Weight table")->required();
    c->add_option("--n", n_draws, "Number of tiles to draw")->capture_default_str();
    c->add_option("--offset", offset, "Stream position to start from")->capture_default_str();
    c->add_option("--seed", seed, "Random seed")->capture_default_str();
    c->add_option("--out", out_path, "Output tile list CSV (default stdout)");
    actions[c] = [&] {
      Catalog catalog;
      const SamplerIndex index = load_index(catalog);
      TileStream stream(index, WeightTable::load(weights_path), seed, offset);
      std::vector<TileRef> drawn;
      drawn.reserve(n_draws);
      for (std::size_t i = 0; i < n_draws; ++i) drawn.push_back(stream.next());
      emit(out, out_path, serialize_tiles_csv(drawn));
    };
  }

  // --- augment
  std::string out_dir;
  std::size_t limit = 0;
  {
    auto* c = app.add_subcommand("augment", "Stain-transfer and dihedral augmentation of listed tiles");
    c->add_option("--manifest", manifest, "Slide manifest")->required();
    c->add_option("--tiles", tiles_path, "Tile list CSV (e.g. sample output)")->required();
    c->add_option("--stats", stats_path, "Staining statistics CSV")->required();
    c->add_option("--out-dir", out_dir, "Directory for PNG views and augment.csv")->required();
    c->add_option("--limit", limit, "Only the first N tiles (0 = all)")->capture_default_str();
    c->add_option("--seed", seed, "Random seed")->capture_default_str();
    actions[c] = [&] {
      const Catalog catalog = load_manifest(manifest);
      const TileSource source(catalog);
      const StainStatsTable stats = load_stain_stats(stats_path);
      auto tiles = load_tiles_csv(tiles_path);
      if (limit > 0 && tiles.size() > limit) tiles.resize(limit);
      fs::create_directories(out_dir);
      std::string csv = "index,slide_id,x,y,target_slide,dihedral\n";
      for (std::size_t i = 0; i < tiles.size(); ++i) {
        const AugmentedView v = augment_view(tiles[i], source, stats, counter_hash(seed, i));
        char name[32];
        std::snprintf(name, sizeof name, "aug_%06zu.png", i);
        write_png((fs::path(out_dir) / name).string(), v.image);
        csv += std::to_string(i) + "," + tiles[i].slide_id + "," + std::to_string(tiles[i].x) + "," +
               std::to_string(tiles[i].y) + "," + v.target_slide + "," + std::to_string(v.dihedral_code) + "\n";
      }
      write_text(fs::path(out_dir) / "augment.csv", csv);
      out << "views " << tiles.size() << "\n";
    };
  }

  // --- embed
  std::string store_path, import_path, table_out, embedder_name = "features", exclude;
  int dim = 64;
  {
    auto* c = app.add_subcommand("embed", "Build an embedding store from tiles or an imported table");
    c->add_option("--manifest", manifest, "Slide manifest")->required();
    c->add_option("--tiles", tiles_path, "Tile list CSV (not needed with --import)");
    c->add_option("--import", import_path, "Import precomputed embeddings (RVFV) instead of embedding tiles");
    c->add_option("--embedder", embedder_name, "features (36-d) or projection")
        ->check(CLI::IsMember({"features", "projection"}))
        ->capture_default_str();
    c->add_option("--dim", dim, "Projection embedder dimension")->capture_default_str();
    c->add_option("--seed", seed, "Projection embedder seed")->capture_default_str();
    c->add_option("--exclude", exclude, "Comma-separated slide ids to leave out");
    c->add_option("--out", store_path, "Output embedding store (RVES)")->required();
    c->add_option("--table", table_out, "Also write the embeddings as a row table (RVFV)");
    actions[c] = [&] {
      const Catalog catalog = load_manifest(manifest);
      EmbeddingStore store;
      const auto skip = split_list(exclude);
      const std::set<std::string> excluded(skip.begin(), skip.end());
      if (!import_path.empty()) {
        store = store_from_table(FeatureTable::load(import_path), catalog);
        if (!excluded.empty()) {
          EmbeddingStore kept(store.dim());
          for (const auto& s : store.slides())
            if (!excluded.count(s.slide_id)) kept.add(s);
          store = std::move(kept);
        }
      } else {
        if (tiles_path.empty()) throw ConfigError("embed needs --tiles or --import");
        const TileSource source(catalog);
        std::unique_ptr<Embedder> embedder;
        if (embedder_name == "projection") {
          embedder = std::make_unique<RandomProjectionEmbedder>(dim, seed);
        } else {
          embedder = std::make_unique<FeatureEmbedder>();
        }
        BuildReport report;
        store = build_store(catalog, tiles_by_slide(load_tiles_csv(tiles_path)), *embedder, source, &report, excluded);
        for (const auto& id : report.skipped) err << "warning: slide " << id << " has no tiles, skipped\n";
      }
      store.save(store_path);
      if (!table_out.empty()) table_from_store(store, catalog).save(table_out);
      out << "slides " << store.size() << "\ntiles " << store.tile_count() << "\ndim " << store.dim() << "\n";
    };
  }

  // --- query
  std::string roi_path;
  QueryOptions qopts;
  bool include_self = false;
  {
    auto* c = app.add_subcommand("query", "Rank store slides against a region of interest");
    c->add_option("--store", store_path, "Embedding store (RVES)")->required();
    c->add_option("--roi", roi_path, "ROI JSON: {\"slide_id\": ..., \"tiles\": [{\"x\":..,\"y\":..}]}")->required();
    c->add_option("--k", qopts.k, "Top-k candidate tiles averaged per ROI tile")->capture_default_str();
    c->add_option("--top", qopts.top_n, "Number of slides returned")->capture_default_str();
    c->add_flag("--include-self", include_self, "Keep the query slide among the candidates");
    c->add_option("--out", out_path, "Output JSON (default stdout)");
    actions[c] = [&] {
      const EmbeddingStore store = EmbeddingStore::load(store_path);
      std::ifstream in(roi_path);
      if (!in) throw IoError("cannot open " + roi_path);
      std::stringstream ss;
      ss << in.rdbuf();
      qopts.include_self = include_self;
      qopts.with_maps = false;
      const RankedResult result = query_topn(store, QueryROI::from_json(ss.str()), qopts);
      emit(out, out_path, ranked_json(result, qopts).dump(2) + "\n");
    };
  }

  // --- eval-retrieval
  std::string queries_list, ks_list = "1,3,5";
  {
    auto* c = app.add_subcommand("eval-retrieval", "Leave-one-out top-k diagnosis accuracy with whole-slide ROIs");
    c->add_option("--store", store_path, "Embedding store (RVES)")->required();
    c->add_option("--queries", queries_list, "Comma-separated query slide ids (default: all with a diagnosis)");
    c->add_option("--k", qopts.k, "Top-k candidate tiles averaged per ROI tile")->capture_default_str();
    c->add_option("--ks", ks_list, "Comma-separated accuracy cut-offs")->capture_default_str();
    c->add_option("--out", out_path, "Output CSV (default stdout)");
    actions[c] = [&] {
      const EmbeddingStore store = EmbeddingStore::load(store_path);
      std::vector<int> ks;
      for (const auto& s : split_list(ks_list)) ks.push_back(std::stoi(s));
      if (ks.empty()) throw ConfigError("--ks is empty");
      std::vector<std::string> ids = split_list(queries_list);
      if (ids.empty()) {
        for (const auto& s : store.slides())
          if (!s.diagnosis.empty()) ids.push_back(s.slide_id);
      }
      std::set<std::string> known;
      for (const auto& s : store.slides())
        if (!s.diagnosis.empty()) known.insert(s.diagnosis);
      qopts.top_n = *std::max_element(ks.begin(), ks.end());
      qopts.with_maps = false;
      std::vector<RankedResult> results;
      std::vector<std::string> truths;
      for (const auto& id : ids) {
        const SlideEmbeddings* s = store.find(id);
        if (!s) throw Error("query slide " + id + " not in store");
        results.push_back(query_topn(store, QueryROI{id, s->coords}, qopts));
        truths.push_back(s->diagnosis);
      }
      const auto acc = topk_accuracy(results, truths, ks, known);
      std::string csv = "k,accuracy,queries\n";
      for (std::size_t i = 0; i < ks.size(); ++i) {
        csv += std::to_string(ks[i]) + "," + fmt(acc[i]) + "," + std::to_string(ids.size()) + "\n";
      }
      emit(out, out_path, csv);
    };
  }

  // --- concept-map
  std::string slide_id;
  int n_components = 3, tile_size = 256, scale = 8;
  bool signed_map = false;
  {
    auto* c = app.add_subcommand("concept-map", "Principal-component heatmaps of a slide's tile embeddings");
    c->add_option("--store", store_path, "Embedding store (RVES)")->required();
    c->add_option("--slide", slide_id, "Slide to render")->required();
    c->add_option("--components", n_components, "Number of components")->capture_default_str();
    c->add_option("--tile-size", tile_size, "Tile grid spacing in pixels")->capture_default_str();
    c->add_option("--scale", scale, "Output pixels per tile")->capture_default_str();
    c->add_flag("--signed", signed_map, "Keep negative scores instead of the positive part");
    c->add_option("--out-dir", out_dir, "Directory for <slide>_pc<i>.png")->required();
    actions[c] = [&] {
      if (scale < 1) throw ConfigError("--scale must be >= 1");
      const EmbeddingStore store = EmbeddingStore::load(store_path);
      const SlideEmbeddings* target = store.find(slide_id);
      if (!target) throw Error("slide " + slide_id + " not in store");
      Eigen::MatrixXd all(static_cast<Eigen::Index>(store.tile_count()), store.dim());
      std::vector<TileCoord> pos;
      Eigen::Index row = 0, first = 0;
      for (const auto& s : store.slides()) {
        if (&s == target) first = row;
        for (std::size_t i = 0; i < s.coords.size(); ++i, ++row) {
          all.row(row) = s.vectors.row(static_cast<Eigen::Index>(i)).cast<double>();
          pos.push_back(s.coords[i]);
        }
      }
      const Eigen::MatrixXd centered = positional_mean_subtract(pos, all);
      const auto pca = pca_fit(centered, n_components);
      const Eigen::MatrixXd scores =
          pca.project(centered.middleRows(first, static_cast<Eigen::Index>(target->coords.size())));
      fs::create_directories(out_dir);
      for (int c = 0; c < n_components; ++c) {
        std::vector<double> v(scores.col(c).data(), scores.col(c).data() + scores.rows());
        const GrayImage cells = component_heatmap(scores_to_grid(target->coords, v, tile_size), !signed_map);
        GrayImage big(cells.width * scale, cells.height * scale);
        for (int y = 0; y < big.height; ++y)
          for (int x = 0; x < big.width; ++x) big.at(x, y) = cells.at(x / scale, y / scale);
        write_png((fs::path(out_dir) / (slide_id + "_pc" + std::to_string(c) + ".png")).string(), big);
        out << "pc" << c << " eigenvalue " << fmt(pca.eigenvalues[c]) << "\n";
      }
    };
  }

  // --- probe
  std::string embeddings_path, test_embeddings, test_labels, sweep_lrs, sweep_wds;
  TrainConfig tcfg;
  double test_fraction = 0.2, val_fraction = 0.1;
  int repeats = 1;
  {
    auto* c = app.add_subcommand("probe", "Linear probe on frozen embeddings: balanced accuracy and macro F1");
    c->add_option("--embeddings", embeddings_path, "Embedding row table (RVFV)")->required();
    c->add_option("--labels", labels_path, "Class labels CSV (row,label)")->required();
    c->add_option("--test-embeddings", test_embeddings, "Separate test table (RVFV)");
    c->add_option("--test-labels", test_labels, "Labels for the test table");
    c->add_option("--test-fraction", test_fraction, "Held-out fraction when no test table is given")->capture_default_str();
    c->add_option("--epochs", tcfg.epochs, "Training epochs")->capture_default_str();
    c->add_option("--lr", tcfg.learning_rate, "Base learning rate")->capture_default_str();
    c->add_option("--batch", tcfg.batch_size, "Batch size")->capture_default_str();
    c->add_option("--weight-decay", tcfg.weight_decay, "Decoupled weight decay")->capture_default_str();
    c->add_option("--sweep-lrs", sweep_lrs, "Comma-separated learning rates to select from");
    c->add_option("--sweep-wds", sweep_wds, "Comma-separated weight decays to select from");
    c->add_option("--val-fraction", val_fraction, "Validation fraction for the sweep")->capture_default_str();
    c->add_option("--repeats", repeats, "Training seeds aggregated as mean and std")->capture_default_str();
    c->add_option("--seed", seed, "Random seed")->capture_default_str();
    c->add_option("--out", out_path, "Output CSV (default stdout)");
    actions[c] = [&] {
      if (repeats < 1) throw ConfigError("--repeats must be >= 1");
      if (test_embeddings.empty() != test_labels.empty()) {
        throw ConfigError("--test-embeddings and --test-labels go together");
      }
      auto load_xy = [](const std::string& tpath, const std::string& lpath, Eigen::MatrixXd& x, std::vector<int>& y) {
        const FeatureTable t = FeatureTable::load(tpath);
        const auto labels = load_labels_csv(lpath);
        x.resize(static_cast<Eigen::Index>(labels.size()), t.dim);
        y.clear();
        for (std::size_t i = 0; i < labels.size(); ++i) {
          if (labels[i].first >= t.size()) {
            throw FormatError(lpath + ": row " + std::to_string(labels[i].first) + " beyond the table");
          }
          x.row(static_cast<Eigen::Index>(i)) = t.values.row(static_cast<Eigen::Index>(labels[i].first)).cast<double>();
          y.push_back(labels[i].second);
        }
      };
      Eigen::MatrixXd x, xtest;
      std::vector<int> y, ytest;
      load_xy(embeddings_path, labels_path, x, y);
      if (!test_embeddings.empty()) {
        load_xy(test_embeddings, test_labels, xtest, ytest);
      } else {
        const auto [train, test] = split_rows(y.size(), test_fraction, seed);
        if (test.empty()) throw ConfigError("test split is empty");
        Eigen::MatrixXd xa(static_cast<Eigen::Index>(train.size()), x.cols());
        xtest.resize(static_cast<Eigen::Index>(test.size()), x.cols());
        std::vector<int> ya;
        for (std::size_t i = 0; i < train.size(); ++i) {
          xa.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(train[i]));
          ya.push_back(y[train[i]]);
        }
        for (std::size_t i = 0; i < test.size(); ++i) {
          xtest.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(test[i]));
          ytest.push_back(y[test[i]]);
        }
        x = std::move(xa);
        y = std::move(ya);
      }
      std::vector<double> lrs, wds;
      for (const auto& s : split_list(sweep_lrs)) lrs.push_back(std::stod(s));
      for (const auto& s : split_list(sweep_wds)) wds.push_back(std::stod(s));
      const bool sweep = !lrs.empty() || !wds.empty();
      if (lrs.empty()) lrs.push_back(tcfg.learning_rate);
      if (wds.empty()) wds.push_back(tcfg.weight_decay);

      std::map<std::string, std::vector<double>> metrics;
      for (int r = 0; r < repeats; ++r) {
        TrainConfig cfg = tcfg;
        cfg.seed = counter_hash(seed, static_cast<std::uint64_t>(r));
        const LinearModel model = sweep ? sweep_probe(x, y, lrs, wds, cfg, val_fraction).model : train_probe(x, y, cfg);
        const auto pred = model.predict(xtest);
        metrics["balanced_accuracy"].push_back(balanced_accuracy(pred, ytest));
        metrics["macro_f1"].push_back(macro_f1(pred, ytest));
        metrics["accuracy"].push_back(accuracy(pred, ytest));
      }
      std::string csv = "metric,mean,std,repeats\n";
      for (const char* name : {"balanced_accuracy", "macro_f1", "accuracy"}) {
        const auto& v = metrics[name];
        double mean = 0.0, var = 0.0;
        for (double e : v) mean += e;
        mean /= static_cast<double>(v.size());
        for (double e : v) var += (e - mean) * (e - mean);
        const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
        csv += std::string(name) + "," + fmt(mean) + "," + fmt(sd) + "," + std::to_string(v.size()) + "\n";
      }
      emit(out, out_path, csv);
    };
  }

  // --- serve
  ServiceFlags sflags;
  {
    auto* c = app.add_subcommand("serve", "HTTP query service (flags override SLIDEKIT_* environment variables)");
    c->add_option("--store", sflags.store, "Embedding store (env SLIDEKIT_STORE)");
    c->add_option("--catalog", sflags.catalog, "Slide manifest (env SLIDEKIT_CATALOG)");
    c->add_option("--bind", sflags.bind, "Bind address (env SLIDEKIT_BIND, default 127.0.0.1)");
    c->add_option("--port", sflags.port, "Port (env SLIDEKIT_PORT, default 8080)");
    c->add_option("--tile-size", sflags.tile_size, "Tile grid spacing (env SLIDEKIT_TILE_SIZE, default 256)");
    c->add_option("--hide-diagnoses", sflags.hide_diagnoses,
                  "Comma-separated slide ids whose diagnosis is withheld (env SLIDEKIT_HIDE_DIAGNOSES)");
    c->add_option("--sync-limit", sflags.sync_tile_limit,
                  "Candidate tiles above which queries run as jobs (env SLIDEKIT_SYNC_LIMIT, default 10000)");
    actions[c] = [&] {
      const ServiceConfig cfg = resolve_service_config(sflags);
      auto service = Service::open(cfg);
      err << "listening on " << cfg.bind << ":" << cfg.port << "\n";
      service->run();
    };
  }

  // --- synth
  SynthOptions synth;
  {
    auto* c = app.add_subcommand("synth", "Generate a procedural slide corpus with configs");
    c->add_option("--slides", synth.slides, "Number of slides")->capture_default_str();
    c->add_option("--diagnoses", synth.diagnoses, "Number of diagnoses")->capture_default_str();
    c->add_option("--width", synth.width, "Slide width in pixels")->capture_default_str();
    c->add_option("--height", synth.height, "Slide height in pixels")->capture_default_str();
    c->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
    c->add_option("--out", out_dir, "Output directory")->required();
    actions[c] = [&] {
      const Catalog catalog = write_synth_corpus(out_dir, synth);
      out << "slides " << catalog.size() << "\n";
    };
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  try {
    for (auto* sub : app.get_subcommands()) actions.at(sub)();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace slidekit::cli
