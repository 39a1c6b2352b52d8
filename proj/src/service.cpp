#include "slidekit/service.hpp"

#include <httplib.h>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "slidekit/errors.hpp"
#include "slidekit/random.hpp"

namespace slidekit {

using ojson = nlohmann::ordered_json;

std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

namespace {

template <typename T>
T parse_number(const std::string& text, const std::string& what) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) throw ConfigError(what + ": not a number: " + text);
  return value;
}

std::set<std::string> split_ids(const std::string& list) {
  std::set<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.insert(item);
  }
  return out;
}

HttpResponse json_response(int status, const ojson& body) { return {status, "application/json", body.dump()}; }

HttpResponse error_response(int status, const std::string& message) {
  ojson j;
  j["error"] = message;
  return json_response(status, j);
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path.substr(0, path.find('?'))) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) parts.push_back(cur);
  return parts;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

ServiceConfig resolve_service_config(const ServiceFlags& flags, const EnvLookup& env) {
  ServiceConfig cfg;
  auto pick = [&](const std::optional<std::string>& flag, const char* var) -> std::optional<std::string> {
    if (flag) return flag;
    return env(var);
  };
  if (auto v = pick(flags.store, "SLIDEKIT_STORE")) cfg.store_path = *v;
  if (auto v = pick(flags.catalog, "SLIDEKIT_CATALOG")) cfg.catalog_path = *v;
  if (auto v = pick(flags.bind, "SLIDEKIT_BIND")) cfg.bind = *v;
  if (auto v = pick(flags.hide_diagnoses, "SLIDEKIT_HIDE_DIAGNOSES")) cfg.hidden_diagnoses = split_ids(*v);
  if (flags.port) {
    cfg.port = *flags.port;
  } else if (auto v = env("SLIDEKIT_PORT")) {
    cfg.port = parse_number<int>(*v, "SLIDEKIT_PORT");
  }
  if (flags.tile_size) {
    cfg.tile_size = *flags.tile_size;
  } else if (auto v = env("SLIDEKIT_TILE_SIZE")) {
    cfg.tile_size = parse_number<int>(*v, "SLIDEKIT_TILE_SIZE");
  }
  if (flags.sync_tile_limit) {
    cfg.sync_tile_limit = *flags.sync_tile_limit;
  } else if (auto v = env("SLIDEKIT_SYNC_LIMIT")) {
    cfg.sync_tile_limit = parse_number<std::size_t>(*v, "SLIDEKIT_SYNC_LIMIT");
  }
  if (cfg.port < 0 || cfg.port > 65535) throw ConfigError("port out of range: " + std::to_string(cfg.port));
  if (cfg.tile_size < 1) throw ConfigError("tile size must be >= 1");
  return cfg;
}

ojson ranked_json(const RankedResult& result, const QueryOptions& opts, const std::set<std::string>& hidden) {
  ojson j;
  j["query_slide"] = result.query_slide;
  j["k"] = opts.k;
  j["top_n"] = opts.top_n;
  j["results"] = ojson::array();
  int rank = 1;
  for (const auto& e : result.entries) {
    ojson r;
    r["rank"] = rank++;
    r["slide_id"] = e.slide_id;
    r["score"] = e.score;
    if (e.diagnosis.empty() || hidden.count(e.slide_id)) {
      r["diagnosis"] = nullptr;
    } else {
      r["diagnosis"] = e.diagnosis;
    }
    j["results"].push_back(std::move(r));
  }
  return j;
}

std::string query_id(const QueryROI& roi, const QueryOptions& opts) {
  std::string canon = roi.slide_id + '\n' + std::to_string(opts.k) + '\n' + std::to_string(opts.top_n) + '\n' +
                      (opts.include_self ? "1" : "0");
  for (const auto& t : roi.tiles) canon += '\n' + std::to_string(t.x) + ',' + std::to_string(t.y);
  return hex64(fnv1a64(canon));
}

// ---------------------------------------------------------------------------

Service::Service(EmbeddingStore store, Catalog catalog, ServiceConfig config)
    : store_(std::move(store)), catalog_(std::move(catalog)), config_(std::move(config)) {
  tiles_ = std::make_unique<TileSource>(catalog_);
  for (const auto& r : catalog_) {
    try {
      sizes_[r.slide_id] = read_image_size(catalog_.image_path(r).string());
    } catch (const Error&) {
      // slide image missing: listed without dimensions, image endpoints return 404
    }
  }
}

std::unique_ptr<Service> Service::open(const ServiceConfig& config) {
  if (config.store_path.empty()) throw ConfigError("no embedding store configured");
  if (config.catalog_path.empty()) throw ConfigError("no catalog configured");
  EmbeddingStore store = EmbeddingStore::load(config.store_path);
  Catalog catalog = load_manifest(config.catalog_path);
  for (const auto& s : store.slides()) {
    if (!catalog.find(s.slide_id)) throw FormatError("store slide " + s.slide_id + " is not in the catalog");
  }
  return std::make_unique<Service>(std::move(store), std::move(catalog), config);
}

std::optional<std::string> Service::visible_diagnosis(const std::string& slide_id, const std::string& diagnosis) const {
  if (diagnosis.empty() || config_.hidden_diagnoses.count(slide_id)) return std::nullopt;
  return diagnosis;
}

ojson Service::slide_summary(const SlideRecord& r) const {
  ojson j;
  j["slide_id"] = r.slide_id;
  j["lab"] = r.lab;
  j["tissue_type"] = r.tissue_type;
  j["staining"] = r.staining;
  j["staining_category"] = to_string(r.staining_category);
  const auto dx = visible_diagnosis(r.slide_id, r.diagnosis.value_or(""));
  j["diagnosis"] = dx ? ojson(*dx) : ojson(nullptr);
  auto size = sizes_.find(r.slide_id);
  j["width"] = size == sizes_.end() ? ojson(nullptr) : ojson(size->second.first);
  j["height"] = size == sizes_.end() ? ojson(nullptr) : ojson(size->second.second);
  const SlideEmbeddings* s = store_.find(r.slide_id);
  j["tiles"] = s ? s->coords.size() : 0;
  return j;
}

HttpResponse Service::health() const {
  ojson j;
  j["status"] = "ok";
  j["slides"] = catalog_.size();
  return json_response(200, j);
}

HttpResponse Service::slides() const {
  ojson j;
  j["slides"] = ojson::array();
  for (const auto& r : catalog_) j["slides"].push_back(slide_summary(r));
  return json_response(200, j);
}

HttpResponse Service::slide_meta(const std::string& id) const {
  const SlideRecord* r = catalog_.find(id);
  if (!r) return error_response(404, "unknown slide " + id);
  ojson j = slide_summary(*r);
  j["scanner"] = r->scanner;
  j["prep"] = to_string(r->prep);
  j["mpp"] = r->mpp;
  j["group_id"] = r->group_id;
  j["tile_size"] = config_.tile_size;
  j["grid"] = ojson::array();
  if (const SlideEmbeddings* s = store_.find(id)) {
    for (const auto& c : s->coords) j["grid"].push_back({{"x", c.x}, {"y", c.y}});
  }
  return json_response(200, j);
}

HttpResponse Service::tile(const std::string& id, const std::string& xs, const std::string& ys) const {
  if (!catalog_.find(id)) return error_response(404, "unknown slide " + id);
  auto size = sizes_.find(id);
  if (size == sizes_.end()) return error_response(404, "no image for slide " + id);
  int x = 0, y = 0;
  try {
    x = parse_number<int>(xs, "x");
    y = parse_number<int>(ys, "y");
  } catch (const Error& e) {
    return error_response(422, e.what());
  }
  const int ts = config_.tile_size;
  if (x < 0 || y < 0 || x % ts != 0 || y % ts != 0) {
    return error_response(422, "tile origin must be a non-negative multiple of " + std::to_string(ts));
  }
  if (x + ts > size->second.first || y + ts > size->second.second) {
    return error_response(404, "tile (" + xs + "," + ys + ") outside slide " + id);
  }
  return {200, "image/png", encode_png(tiles_->read({id, x, y, ts}))};
}

HttpResponse Service::thumbnail(const std::string& id) const {
  if (!catalog_.find(id)) return error_response(404, "unknown slide " + id);
  if (!sizes_.count(id)) return error_response(404, "no image for slide " + id);
  return {200, "image/png", encode_png(downscale_to_fit(*tiles_->slide_image(id), 1024))};
}

std::string Service::run_query(const std::string& qid, const QueryROI& roi, const QueryOptions& opts) const {
  ojson j;
  j["query_id"] = qid;
  j["status"] = "done";
  const ojson ranked = ranked_json(query_topn(store_, roi, opts), opts, config_.hidden_diagnoses);
  for (const auto& [key, value] : ranked.items()) j[key] = value;
  j["roi"] = ojson::array();
  for (const auto& t : roi.tiles) j["roi"].push_back({{"x", t.x}, {"y", t.y}});
  return j.dump();
}

HttpResponse Service::post_query(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    return error_response(400, "request body is not valid JSON");
  }
  if (!j.is_object()) return error_response(400, "request body must be a JSON object");
  QueryROI roi;
  try {
    roi = QueryROI::from_json(body);
  } catch (const Error& e) {
    return error_response(422, e.what());
  }
  QueryOptions opts;
  opts.with_maps = false;
  for (auto [key, field] : {std::pair{"k", &opts.k}, std::pair{"top_n", &opts.top_n}}) {
    if (!j.contains(key)) continue;
    if (!j[key].is_number_integer() || j[key].get<long long>() < 1 || j[key].get<long long>() > 1000000) {
      return error_response(422, std::string(key) + " must be a positive integer");
    }
    *field = j[key].get<int>();
  }
  const SlideEmbeddings* slide = store_.find(roi.slide_id);
  if (!slide) return error_response(404, "unknown slide " + roi.slide_id);
  if (roi.tiles.empty()) return error_response(422, "ROI is empty");
  for (const auto& t : roi.tiles) {
    if (!slide->row_of(t)) {
      return error_response(422, "ROI tile (" + std::to_string(t.x) + "," + std::to_string(t.y) +
                                     ") is outside the tile grid of " + roi.slide_id);
    }
  }

  const std::string qid = query_id(roi, opts);
  std::shared_ptr<QueryEntry> entry;
  {
    std::lock_guard lock(mutex_);
    auto it = queries_.find(qid);
    if (it != queries_.end()) entry = it->second;
  }
  if (!entry) {
    auto fresh = std::make_shared<QueryEntry>();
    fresh->roi = roi;
    fresh->opts = opts;
    const std::size_t candidates = store_.tile_count() - slide->coords.size();
    if (candidates > config_.sync_tile_limit) {
      fresh->body = std::async(std::launch::async, [this, qid, roi, opts] { return run_query(qid, roi, opts); }).share();
    } else {
      std::promise<std::string> done;
      done.set_value(run_query(qid, roi, opts));
      fresh->body = done.get_future().share();
    }
    std::lock_guard lock(mutex_);
    entry = queries_.try_emplace(qid, fresh).first->second;
  }
  const bool ready = entry->body.wait_for(std::chrono::seconds(0)) == std::future_status::ready;
  ojson out;
  out["query_id"] = qid;
  out["status"] = ready ? "done" : "pending";
  return json_response(ready ? 200 : 202, out);
}

HttpResponse Service::get_query(const std::string& qid) {
  std::shared_ptr<QueryEntry> entry;
  {
    std::lock_guard lock(mutex_);
    auto it = queries_.find(qid);
    if (it != queries_.end()) entry = it->second;
  }
  if (!entry) return error_response(404, "unknown query " + qid);
  if (entry->body.wait_for(std::chrono::seconds(0)) != std::future_status::ready) {
    ojson out;
    out["query_id"] = qid;
    out["status"] = "pending";
    return json_response(202, out);
  }
  try {
    return {200, "application/json", entry->body.get()};
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

HttpResponse Service::heatmap(const std::string& qid, const std::string& slide_id) {
  std::shared_ptr<QueryEntry> entry;
  {
    std::lock_guard lock(mutex_);
    auto it = queries_.find(qid);
    if (it != queries_.end()) entry = it->second;
  }
  if (!entry) return error_response(404, "unknown query " + qid);
  const SlideEmbeddings* cand = store_.find(slide_id);
  if (!cand) return error_response(404, "unknown slide " + slide_id);

  const Eigen::MatrixXd cos = cosine_matrix(roi_vectors(store_, entry->roi), cand->vectors);
  const auto ts = static_cast<std::uint32_t>(config_.tile_size);
  std::uint32_t cols = 0, rows = 0;
  auto size = sizes_.find(slide_id);
  if (size != sizes_.end()) {
    cols = static_cast<std::uint32_t>(size->second.first) / ts;
    rows = static_cast<std::uint32_t>(size->second.second) / ts;
  }
  for (const auto& c : cand->coords) {
    cols = std::max(cols, c.x / ts + 1);
    rows = std::max(rows, c.y / ts + 1);
  }
  std::vector<std::vector<std::optional<double>>> grid(rows, std::vector<std::optional<double>>(cols));
  for (std::size_t i = 0; i < cand->coords.size(); ++i) {
    grid[cand->coords[i].y / ts][cand->coords[i].x / ts] = cos.col(static_cast<Eigen::Index>(i)).maxCoeff();
  }
  ojson j;
  j["query_id"] = qid;
  j["slide_id"] = slide_id;
  j["tile_size"] = config_.tile_size;
  j["rows"] = rows;
  j["cols"] = cols;
  j["grid"] = ojson::array();
  for (const auto& row : grid) {
    ojson r = ojson::array();
    for (const auto& v : row) r.push_back(v ? ojson(*v) : ojson(nullptr));
    j["grid"].push_back(std::move(r));
  }
  return json_response(200, j);
}

HttpResponse Service::handle(const HttpRequest& req) {
  const auto p = split_path(req.path);
  const bool get = req.method == "GET";
  const bool post = req.method == "POST";
  try {
    if (p.size() < 2 || p[0] != "api") return error_response(404, "no route for " + req.path);
    if (p[1] == "health" && p.size() == 2) return get ? health() : error_response(405, "method not allowed");
    if (p[1] == "slides") {
      if (!get) return error_response(405, "method not allowed");
      if (p.size() == 2) return slides();
      if (p.size() == 4 && p[3] == "meta") return slide_meta(p[2]);
      if (p.size() == 4 && p[3] == "thumbnail") return thumbnail(p[2]);
      if (p.size() == 6 && p[3] == "tiles") return tile(p[2], p[4], p[5]);
    }
    if (p[1] == "queries") {
      if (p.size() == 2) return post ? post_query(req.body) : error_response(405, "method not allowed");
      if (!get) return error_response(405, "method not allowed");
      if (p.size() == 3) return get_query(p[2]);
      if (p.size() == 5 && p[3] == "heatmap") return heatmap(p[2], p[4]);
    }
    return error_response(404, "no route for " + req.path);
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

void Service::run() {
  httplib::Server server;
  auto bridge = [this](const httplib::Request& in, httplib::Response& out) {
    const HttpResponse r = handle({in.method, in.path, in.body});
    out.status = r.status;
    out.set_content(r.body, r.content_type);
  };
  server.Get(R"(/api/.*)", bridge);
  server.Post(R"(/api/.*)", bridge);
  if (!server.listen(config_.bind, config_.port)) {
    throw IoError("cannot listen on " + config_.bind + ":" + std::to_string(config_.port));
  }
}

}  // namespace slidekit
