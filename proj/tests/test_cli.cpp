#include <doctest.h>

#include <json.hpp>

#include "pipeline.hpp"
#include "slidekit/cluster.hpp"
#include "slidekit/features.hpp"
#include "slidekit/retrieval.hpp"

using namespace slidekit;
using testing::run_cli;
namespace fs = std::filesystem;

namespace {

testing::Corpus& corpus() {
  static testing::Corpus c(12, 512, 512, "cli");
  return c;
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("help and usage errors") {
  for (const char* sub : {"ingest", "features", "stats", "cluster", "propagate", "merge", "index", "sample", "augment",
                          "embed", "query", "eval-retrieval", "concept-map", "probe", "serve", "synth"}) {
    const auto r = run_cli({sub, "--help"});
    CHECK_MESSAGE(r.code == 0, sub);
    CHECK_MESSAGE(!r.out.empty(), sub);
  }
  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({}).code == 1);
  CHECK(run_cli({"frobnicate"}).code == 1);
  CHECK(run_cli({"query", "--roi", "x.json"}).code == 1);
  CHECK(run_cli({"cluster", "--features", "f", "--out", "o", "--k", "many"}).code == 1);

  const auto missing = run_cli({"query", "--store", "/nonexistent/store.rves", "--roi", "/nonexistent/roi.json"});
  CHECK(missing.code == 2);
  CHECK(missing.err.rfind("error: ", 0) == 0);
}

TEST_CASE("pipeline through the command line") {
  testing::Corpus& c = corpus();
  const std::string m = c.manifest.string(), tiles = c.tiles.string();
  auto at = [&](const std::string& name) { return (c.dir / name).string(); };

  REQUIRE(run_cli({"features", "--manifest", m, "--tiles", tiles, "--out", at("f.rvfv")}).code == 0);
  const FeatureTable ft = FeatureTable::load(at("f.rvfv"));
  CHECK(ft.dim == 36);
  CHECK(ft.size() == load_tiles_csv(c.tiles).size());

  REQUIRE(run_cli({"stats", "--manifest", m, "--tiles", tiles, "--out", at("stats.csv")}).code == 0);
  CHECK(load_stain_stats(at("stats.csv")).size() == 12);

  REQUIRE(run_cli({"cluster", "--features", at("f.rvfv"), "--out", at("k4.rvcm"), "--k", "4", "--per-slide", "3"}).code == 0);
  CHECK(ClusterModel::load(at("k4.rvcm")).k == 4);
  REQUIRE(run_cli({"propagate", "--features", at("f.rvfv"), "--model", at("k4.rvcm"), "--out", at("raw.csv"),
               "--per-slide", "3"})
              .code == 0);
  CHECK(count_lines(testing::read_file(at("raw.csv"))) == static_cast<int>(ft.size()) + 1);

  testing::write_file(at("k4.map"), "raw_clusters 4\nmeta 0 1.0 a\nmeta 1 2.0 b\nmap 0-1 0\nmap 2 1\ndrop 3\n");
  REQUIRE(run_cli({"merge", "--labels", at("raw.csv"), "--map", at("k4.map"), "--out", at("meta.csv")}).code == 0);

  const auto idx = run_cli({"index", "--manifest", m, "--tiles", tiles, "--meta", at("meta.csv"), "--weights",
                        (c.dir / "weights.conf").string()});
  REQUIRE(idx.code == 0);
  CHECK(idx.out.rfind("group,meta,tiles,probability", 0) == 0);

  const std::vector<std::string> sample = {"sample", "--manifest", m, "--tiles", tiles, "--meta", at("meta.csv"),
                                           "--weights", (c.dir / "weights.conf").string(), "--n", "50", "--seed", "4"};
  const auto s1 = run_cli(sample), s2 = run_cli(sample);
  REQUIRE(s1.code == 0);
  CHECK(s1.out == s2.out);
  CHECK(count_lines(s1.out) == 51);
  std::vector<std::string> offset(sample.begin(), sample.end() - 4);
  offset.insert(offset.end(), {"--n", "40", "--seed", "4", "--offset", "10"});
  const auto s3 = run_cli(offset);
  const auto tail = s1.out.substr(s1.out.find('\n') + 1);
  std::string expect_tail = tail;
  for (int i = 0; i < 10; ++i) expect_tail = expect_tail.substr(expect_tail.find('\n') + 1);
  CHECK(s3.out.substr(s3.out.find('\n') + 1) == expect_tail);

  testing::write_file(at("drawn.csv"), s1.out);
  REQUIRE(run_cli({"augment", "--manifest", m, "--tiles", at("drawn.csv"), "--stats", at("stats.csv"), "--out-dir",
               at("aug"), "--limit", "3"})
              .code == 0);
  CHECK(fs::exists(c.dir / "aug" / "augment.csv"));

  REQUIRE(run_cli({"embed", "--manifest", m, "--tiles", tiles, "--embedder", "projection", "--dim", "16", "--out",
               at("p.rves"), "--table", at("p.rvfv")})
              .code == 0);
  CHECK(EmbeddingStore::load(at("p.rves")).dim() == 16);

  const auto eval = run_cli({"eval-retrieval", "--store", c.store.string(), "--ks", "1,3"});
  REQUIRE(eval.code == 0);
  CHECK(eval.out.rfind("k,accuracy,queries", 0) == 0);
  CHECK(count_lines(eval.out) == 3);

  REQUIRE(run_cli({"concept-map", "--store", c.store.string(), "--slide", "S003", "--components", "2", "--out-dir",
               at("maps")})
              .code == 0);
  CHECK(fs::exists(c.dir / "maps" / "S003_pc0.png"));
  CHECK(fs::exists(c.dir / "maps" / "S003_pc1.png"));

  // Two-class probe on the exported table, labelled by slide parity.
  const FeatureTable pt = FeatureTable::load(at("p.rvfv"));
  std::string labels = "row,label\n";
  for (std::size_t i = 0; i < pt.size(); ++i) labels += std::to_string(i) + "," + std::to_string(pt.keys[i].slide_index % 2) + "\n";
  testing::write_file(at("labels.csv"), labels);
  const std::vector<std::string> probe = {"probe", "--embeddings", at("p.rvfv"), "--labels", at("labels.csv"),
                                          "--epochs", "3", "--lr", "0.01", "--repeats", "2", "--seed", "1"};
  const auto p1 = run_cli(probe), p2 = run_cli(probe);
  REQUIRE(p1.code == 0);
  CHECK(p1.out == p2.out);
  CHECK(p1.out.rfind("metric,mean,std,repeats", 0) == 0);
  CHECK(p1.out.find("balanced_accuracy,") != std::string::npos);
  CHECK(p1.out.find("macro_f1,") != std::string::npos);
}

TEST_CASE("query output is deterministic") {
  testing::Corpus& c = corpus();
  testing::write_file(c.dir / "roi.json", R"({"slide_id":"S002","tiles":[{"x":0,"y":0}]})");
  const std::vector<std::string> args = {"query", "--store", c.store.string(), "--roi", (c.dir / "roi.json").string(),
                                         "--top", "4"};
  const auto a = run_cli(args), b = run_cli(args);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  const auto j = nlohmann::json::parse(a.out);
  CHECK(j["query_slide"] == "S002");
  CHECK(j["results"].size() == 4);

  testing::write_file(c.dir / "bad_roi.json", R"({"slide_id":"S002","tiles":[{"x":7,"y":0}]})");
  CHECK(run_cli({"query", "--store", c.store.string(), "--roi", (c.dir / "bad_roi.json").string()}).code == 2);
}
