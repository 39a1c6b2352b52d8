#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "slidekit/catalog.hpp"
#include "slidekit/retrieval.hpp"

namespace slidekit {

struct ServiceConfig {
  std::filesystem::path store_path;
  std::filesystem::path catalog_path;
  std::string bind = "127.0.0.1";
  int port = 8080;
  int tile_size = 256;
  std::set<std::string> hidden_diagnoses;  // slide ids whose diagnosis is withheld
  std::size_t sync_tile_limit = 10000;     // larger candidate sets run as background jobs
};

// Unset fields fall back to SLIDEKIT_STORE, SLIDEKIT_CATALOG, SLIDEKIT_BIND,
// SLIDEKIT_PORT, SLIDEKIT_TILE_SIZE, SLIDEKIT_HIDE_DIAGNOSES (comma list),
// SLIDEKIT_SYNC_LIMIT, then to the defaults above.
struct ServiceFlags {
  std::optional<std::string> store, catalog, bind, hide_diagnoses;
  std::optional<int> port, tile_size;
  std::optional<std::size_t> sync_tile_limit;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
std::optional<std::string> process_env(const std::string& name);
ServiceConfig resolve_service_config(const ServiceFlags& flags, const EnvLookup& env = process_env);

struct HttpRequest {
  std::string method;
  std::string path;
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

// {"query_slide", "k", "top_n", "results": [{"rank", "slide_id", "score", "diagnosis"}]}
nlohmann::ordered_json ranked_json(const RankedResult& result, const QueryOptions& opts,
                                   const std::set<std::string>& hidden = {});

// Stable id of a query: hash of its canonical form.
std::string query_id(const QueryROI& roi, const QueryOptions& opts);

class Service {
 public:
  Service(EmbeddingStore store, Catalog catalog, ServiceConfig config);
  // Loads store and catalog named by the config; throws with a diagnostic.
  static std::unique_ptr<Service> open(const ServiceConfig& config);

  HttpResponse handle(const HttpRequest& request);
  // Blocks serving HTTP on config.bind:config.port.
  void run();

  const ServiceConfig& config() const { return config_; }

 private:
  struct QueryEntry {
    QueryROI roi;
    QueryOptions opts;
    std::shared_future<std::string> body;
  };

  HttpResponse health() const;
  HttpResponse slides() const;
  HttpResponse slide_meta(const std::string& id) const;
  HttpResponse tile(const std::string& id, const std::string& xs, const std::string& ys) const;
  HttpResponse thumbnail(const std::string& id) const;
  HttpResponse post_query(const std::string& body);
  HttpResponse get_query(const std::string& qid);
  HttpResponse heatmap(const std::string& qid, const std::string& slide_id);

  nlohmann::ordered_json slide_summary(const SlideRecord& r) const;
  std::optional<std::string> visible_diagnosis(const std::string& slide_id, const std::string& diagnosis) const;
  std::string run_query(const std::string& qid, const QueryROI& roi, const QueryOptions& opts) const;

  EmbeddingStore store_;
  Catalog catalog_;
  ServiceConfig config_;
  std::unique_ptr<TileSource> tiles_;
  std::map<std::string, std::pair<int, int>> sizes_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<QueryEntry>> queries_;
};

}  // namespace slidekit
