#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cli.hpp"
#include "support.hpp"

namespace testing {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

inline CliResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = slidekit::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

inline void cli_ok(const std::vector<std::string>& args) {
  const CliResult r = run_cli(args);
  if (r.code != 0) throw std::runtime_error(args.front() + " failed: " + r.err);
}

// Synthetic corpus taken through ingest and feature embedding.
struct Corpus {
  TempDir dir;
  fs::path manifest, tiles, store;

  Corpus(int slides, int width, int height, const std::string& tag = "corpus") : dir(tag) {
    const std::string root = dir.path().string();
    cli_ok({"synth", "--slides", std::to_string(slides), "--width", std::to_string(width), "--height",
            std::to_string(height), "--out", root});
    manifest = dir / "ingested.jsonl";
    tiles = dir / "tiles.csv";
    store = dir / "store.rves";
    cli_ok({"ingest", "--manifest", root + "/manifest.jsonl", "--groups", root + "/groups.conf", "--out-manifest",
            manifest.string(), "--tiles", tiles.string()});
    cli_ok({"embed", "--manifest", manifest.string(), "--tiles", tiles.string(), "--out", store.string()});
  }
};

}  // namespace testing
