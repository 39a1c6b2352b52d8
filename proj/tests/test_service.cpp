#include <doctest.h>

#include <chrono>
#include <thread>

#include <json.hpp>

#include "pipeline.hpp"
#include "slidekit/errors.hpp"
#include "slidekit/service.hpp"

using namespace slidekit;
using nlohmann::json;

namespace {

// 10 slides of 512x512, four tiles each.
testing::Corpus& corpus() {
  static testing::Corpus c(10, 512, 512, "service");
  return c;
}

ServiceConfig config_for(const testing::Corpus& c) {
  ServiceConfig cfg;
  cfg.store_path = c.store;
  cfg.catalog_path = c.manifest;
  return cfg;
}

json get(Service& s, const std::string& path, int expect = 200) {
  const HttpResponse r = s.handle({"GET", path, ""});
  REQUIRE(r.status == expect);
  REQUIRE(r.content_type == "application/json");
  return json::parse(r.body);
}

HttpResponse post(Service& s, const std::string& body) { return s.handle({"POST", "/api/queries", body}); }

const std::string kRoi = R"({"slide_id":"S000","roi":[{"x":0,"y":0},{"x":256,"y":0}],"k":3,"top_n":5})";

}  // namespace

TEST_CASE("catalog endpoints") {
  ServiceConfig cfg = config_for(corpus());
  cfg.hidden_diagnoses = {"S001"};
  auto svc = Service::open(cfg);

  const json health = get(*svc, "/api/health");
  CHECK(health["status"] == "ok");
  CHECK(health["slides"] == 10);

  const json slides = get(*svc, "/api/slides")["slides"];
  REQUIRE(slides.size() == 10);
  CHECK(slides[0]["slide_id"] == "S000");
  CHECK(slides[0]["diagnosis"] == "adenocarcinoma");
  CHECK(slides[1]["diagnosis"].is_null());
  CHECK(slides[0]["width"] == 512);
  CHECK(slides[0]["tiles"] == 4);

  const json meta = get(*svc, "/api/slides/S002/meta");
  CHECK(meta["slide_id"] == "S002");
  CHECK(meta["tile_size"] == 256);
  CHECK(meta["grid"].size() == 4);
  CHECK(meta["mpp"] == 0.5);
  get(*svc, "/api/slides/NOPE/meta", 404);

  const HttpResponse tile = svc->handle({"GET", "/api/slides/S000/tiles/256/256", ""});
  REQUIRE(tile.status == 200);
  CHECK(tile.content_type == "image/png");
  const Catalog catalog = load_manifest(corpus().manifest);
  CHECK(decode_image(tile.body, "tile") == read_tile(catalog, {"S000", 256, 256, 256}));
  CHECK(svc->handle({"GET", "/api/slides/S000/tiles/100/0", ""}).status == 422);
  CHECK(svc->handle({"GET", "/api/slides/S000/tiles/abc/0", ""}).status == 422);
  CHECK(svc->handle({"GET", "/api/slides/S000/tiles/512/0", ""}).status == 404);
  CHECK(svc->handle({"GET", "/api/slides/NOPE/tiles/0/0", ""}).status == 404);

  const HttpResponse thumb = svc->handle({"GET", "/api/slides/S000/thumbnail", ""});
  REQUIRE(thumb.status == 200);
  const RgbImage t = decode_image(thumb.body, "thumbnail");
  CHECK(t.width == 512);
  CHECK(t.height == 512);

  CHECK(svc->handle({"GET", "/api/unknown", ""}).status == 404);
  CHECK(svc->handle({"GET", "/nothing", ""}).status == 404);
  CHECK(svc->handle({"DELETE", "/api/health", ""}).status == 405);
  CHECK(svc->handle({"GET", "/api/queries", ""}).status == 405);
}

TEST_CASE("query endpoints") {
  ServiceConfig cfg = config_for(corpus());
  cfg.hidden_diagnoses = {"S005"};
  auto svc = Service::open(cfg);

  CHECK(post(*svc, "{not json").status == 400);
  CHECK(post(*svc, "[1,2]").status == 400);
  CHECK(post(*svc, R"({"roi":[{"x":0,"y":0}]})").status == 422);
  CHECK(post(*svc, R"({"slide_id":"S000","roi":[]})").status == 422);
  CHECK(post(*svc, R"({"slide_id":"S000","roi":[{"x":-1,"y":0}]})").status == 422);
  CHECK(post(*svc, R"({"slide_id":"S000","roi":[{"x":128,"y":0}]})").status == 422);
  CHECK(post(*svc, R"({"slide_id":"S000","roi":[{"x":0,"y":0}],"k":0})").status == 422);
  CHECK(post(*svc, R"({"slide_id":"S000","roi":[{"x":0,"y":0}],"top_n":"5"})").status == 422);
  CHECK(post(*svc, R"({"slide_id":"NOPE","roi":[{"x":0,"y":0}]})").status == 404);
  CHECK(svc->handle({"GET", "/api/queries/0000000000000000", ""}).status == 404);

  const HttpResponse created = post(*svc, kRoi);
  REQUIRE(created.status == 200);
  const json c = json::parse(created.body);
  CHECK(c["status"] == "done");
  const std::string qid = c["query_id"];
  CHECK(qid.size() == 16);

  const std::string body = svc->handle({"GET", "/api/queries/" + qid, ""}).body;
  const json result = json::parse(body);
  CHECK(result["query_slide"] == "S000");
  CHECK(result["k"] == 3);
  CHECK(result["top_n"] == 5);
  CHECK(result["roi"].size() == 2);
  const json& rows = result["results"];
  REQUIRE(rows.size() == 5);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i]["rank"] == i + 1);
    CHECK(rows[i]["slide_id"] != "S000");
    if (i > 0) CHECK(rows[i - 1]["score"].get<double>() >= rows[i]["score"].get<double>());
    if (rows[i]["slide_id"] == "S005") CHECK(rows[i]["diagnosis"].is_null());
  }

  SUBCASE("same request replays the same id and body") {
    const HttpResponse again = post(*svc, kRoi);
    CHECK(json::parse(again.body)["query_id"] == qid);
    CHECK(svc->handle({"GET", "/api/queries/" + qid, ""}).body == body);
    auto fresh = Service::open(cfg);
    post(*fresh, kRoi);
    CHECK(fresh->handle({"GET", "/api/queries/" + qid, ""}).body == body);
  }
  SUBCASE("matches the command-line query") {
    testing::TempDir dir("svc-cli");
    testing::write_file(dir / "roi.json", kRoi);
    const auto r = testing::run_cli({"query", "--store", corpus().store.string(), "--roi", (dir / "roi.json").string(),
                                 "--k", "3", "--top", "5"});
    REQUIRE(r.code == 0);
    const json cli = json::parse(r.out);
    REQUIRE(cli["results"].size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(cli["results"][i]["slide_id"] == rows[i]["slide_id"]);
      CHECK(cli["results"][i]["score"] == rows[i]["score"]);
    }
  }
  SUBCASE("heatmap") {
    const json h = get(*svc, "/api/queries/" + qid + "/heatmap/S003");
    CHECK(h["rows"] == 2);
    CHECK(h["cols"] == 2);
    for (const auto& row : h["grid"])
      for (const auto& v : row) {
        REQUIRE(v.is_number());
        CHECK(v.get<double>() <= 1.0 + 1e-12);
      }
    const json self = get(*svc, "/api/queries/" + qid + "/heatmap/S000");
    CHECK(self["grid"][0][0].get<double>() == doctest::Approx(1.0));
    get(*svc, "/api/queries/" + qid + "/heatmap/NOPE", 404);
  }
}

TEST_CASE("a duplicated slide scores 1") {
  EmbeddingStore store = EmbeddingStore::load(corpus().store);
  Catalog catalog = load_manifest(corpus().manifest);
  SlideEmbeddings copy = *store.find("S004");
  copy.slide_id = "S004-copy";
  store.add(copy);
  SlideRecord rec = *catalog.find("S004");
  rec.slide_id = "S004-copy";
  catalog.add(rec);
  Service svc(std::move(store), std::move(catalog), config_for(corpus()));
  const auto created = post(svc, R"({"slide_id":"S004","roi":[{"x":0,"y":0},{"x":256,"y":256}],"k":1})");
  REQUIRE(created.status == 200);
  const json r = get(svc, "/api/queries/" + json::parse(created.body)["query_id"].get<std::string>());
  CHECK(r["results"][0]["slide_id"] == "S004-copy");
  CHECK(r["results"][0]["score"].get<double>() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("background queries") {
  ServiceConfig cfg = config_for(corpus());
  cfg.sync_tile_limit = 0;
  auto svc = Service::open(cfg);
  const HttpResponse created = post(*svc, kRoi);
  CHECK((created.status == 202 || created.status == 200));
  const std::string qid = json::parse(created.body)["query_id"];
  HttpResponse r;
  for (int i = 0; i < 500; ++i) {
    r = svc->handle({"GET", "/api/queries/" + qid, ""});
    if (r.status == 200) break;
    CHECK(json::parse(r.body)["status"] == "pending");
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  REQUIRE(r.status == 200);
  CHECK(json::parse(r.body)["status"] == "done");
  CHECK(json::parse(r.body)["results"].size() == 5);
}

TEST_CASE("concurrent requests") {
  auto svc = Service::open(config_for(corpus()));
  std::vector<std::thread> workers;
  std::vector<int> failures(8, 0);
  for (int w = 0; w < 8; ++w) {
    workers.emplace_back([&, w] {
      for (int i = 0; i < 10; ++i) {
        const std::string slide = "S00" + std::to_string((w + i) % 10);
        const auto p = post(*svc, R"({"slide_id":")" + slide + R"(","roi":[{"x":0,"y":256}],"k":)" +
                                      std::to_string(1 + i % 3) + "}");
        if (p.status != 200) ++failures[static_cast<std::size_t>(w)];
        const auto g = svc->handle({"GET", "/api/queries/" + json::parse(p.body)["query_id"].get<std::string>(), ""});
        if (g.status != 200) ++failures[static_cast<std::size_t>(w)];
        if (svc->handle({"GET", "/api/slides/" + slide + "/tiles/0/0", ""}).status != 200) ++failures[static_cast<std::size_t>(w)];
      }
    });
  }
  for (auto& t : workers) t.join();
  for (int f : failures) CHECK(f == 0);
}

TEST_CASE("configuration precedence") {
  const std::map<std::string, std::string> vars = {{"SLIDEKIT_PORT", "9001"},
                                                   {"SLIDEKIT_STORE", "/env/store.rves"},
                                                   {"SLIDEKIT_HIDE_DIAGNOSES", "a,b"},
                                                   {"SLIDEKIT_SYNC_LIMIT", "42"}};
  const EnvLookup env = [&](const std::string& k) -> std::optional<std::string> {
    auto it = vars.find(k);
    return it == vars.end() ? std::nullopt : std::optional(it->second);
  };
  const EnvLookup empty = [](const std::string&) { return std::nullopt; };

  const ServiceConfig defaults = resolve_service_config({}, empty);
  CHECK(defaults.port == 8080);
  CHECK(defaults.bind == "127.0.0.1");
  CHECK(defaults.tile_size == 256);
  CHECK(defaults.sync_tile_limit == 10000);

  const ServiceConfig from_env = resolve_service_config({}, env);
  CHECK(from_env.port == 9001);
  CHECK(from_env.store_path == "/env/store.rves");
  CHECK(from_env.hidden_diagnoses == std::set<std::string>{"a", "b"});
  CHECK(from_env.sync_tile_limit == 42);

  ServiceFlags flags;
  flags.port = 7000;
  flags.store = "/flag/store.rves";
  const ServiceConfig from_flags = resolve_service_config(flags, env);
  CHECK(from_flags.port == 7000);
  CHECK(from_flags.store_path == "/flag/store.rves");
  CHECK(from_flags.sync_tile_limit == 42);

  const std::map<std::string, std::string> bad = {{"SLIDEKIT_PORT", "http"}};
  CHECK_THROWS_AS(resolve_service_config({}, [&](const std::string& k) -> std::optional<std::string> {
                    auto it = bad.find(k);
                    return it == bad.end() ? std::nullopt : std::optional(it->second);
                  }),
                  ConfigError);
  flags.port = 70000;
  CHECK_THROWS_AS(resolve_service_config(flags, empty), ConfigError);

  ServiceConfig missing;
  CHECK_THROWS_AS(Service::open(missing), ConfigError);
}
