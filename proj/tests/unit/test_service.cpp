#include <gtest/gtest.h>

#include <thread>

#include "fixtures.hpp"
#include "httplib.h"
#include "json.hpp"
#include "instructtime/service.hpp"

using namespace instructtime;
using namespace instructtime::service;
using nlohmann::json;

namespace {

LoadedState tiny_state() {
  LoadedState s;
  s.model = fixtures::tiny_model();
  s.schema = synth::AttributeSchema::synthetic();
  s.templates = synth::TemplateBank::synthetic();
  s.checkpoint_fingerprint = "test";
  return s;
}

std::string edit_body(const std::vector<double>& weights, int length = 24) {
  json j;
  std::vector<double> series(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) series[t] = 0.3 * t - 2.0;
  j["series"] = series;
  j["instruction"] = "The time series shows downward linear trend.";
  j["weights"] = weights;
  return j.dump();
}

void expect_api_error(const Response& r, int status, const std::string& code) {
  EXPECT_EQ(r.status, status) << r.body;
  const auto j = json::parse(r.body);
  EXPECT_EQ(j.at("code"), code) << r.body;
  EXPECT_TRUE(j.at("message").is_string());
  EXPECT_TRUE(j.contains("details"));
}

}  // namespace

TEST(Service, NotLoaded) {
  Service svc({});
  EXPECT_FALSE(svc.loaded());
  expect_api_error(svc.handle_health(), 503, "not_loaded");
  expect_api_error(svc.handle_edit(edit_body({0.5})), 503, "not_loaded");
  expect_api_error(svc.handle_templates(), 503, "not_loaded");
  expect_api_error(svc.handle_sample({}), 404, "no_dataset");
}

TEST(Service, HealthAndTemplates) {
  Service svc({});
  svc.set_state(tiny_state());
  const auto h = json::parse(svc.handle_health().body);
  EXPECT_EQ(h.at("status"), "ok");
  const auto r = svc.handle_templates();
  ASSERT_EQ(r.status, 200);
  const auto j = json::parse(r.body);
  std::vector<std::size_t> counts;
  for (const auto& a : j.at("attributes")) counts.push_back(a.at("levels").size());
  EXPECT_EQ(counts, (std::vector<std::size_t>{5, 2, 3, 2}));
  EXPECT_EQ(j["attributes"][0]["levels"][0]["sentences"][0], "No trend.");
}

TEST(Service, EditReturnsOneCurvePerWeight) {
  Service svc({});
  svc.set_state(tiny_state());
  const auto r = svc.handle_edit(edit_body({0.0, 0.9}));
  ASSERT_EQ(r.status, 200) << r.body;
  const auto j = json::parse(r.body);
  ASSERT_EQ(j.at("edits").size(), 2u);
  for (const auto& e : j["edits"]) EXPECT_EQ(e.at("values").size(), 24u);
  EXPECT_EQ(j["edits"][1]["w"], 0.9);
  EXPECT_EQ(j.at("reconstruction"), j["edits"][0]["values"]);
  EXPECT_EQ(j.at("zNorms").size(), 2u);
}

TEST(Service, EditValidation) {
  Service svc({});
  svc.set_state(tiny_state());
  expect_api_error(svc.handle_edit(edit_body({})), 400, "invalid_weights");
  expect_api_error(svc.handle_edit(edit_body({0.5, 0.2})), 400, "invalid_weights");
  expect_api_error(svc.handle_edit(edit_body({2.0})), 400, "invalid_weights");
  const auto mismatch = svc.handle_edit(edit_body({0.5}, 23));
  expect_api_error(mismatch, 400, "length_mismatch");
  EXPECT_EQ(json::parse(mismatch.body)["details"]["expected"], 24);
  EXPECT_EQ(json::parse(mismatch.body)["details"]["actual"], 23);
  expect_api_error(svc.handle_edit("{oops"), 400, "invalid_json");
  expect_api_error(svc.handle_edit("[1,2]"), 400, "invalid_request");
  expect_api_error(svc.handle_edit(R"({"seriesId":"nope","instruction":"x","weights":[0.5]})"), 404,
                   "unknown_series");
  auto j = json::parse(edit_body({0.5}));
  j["seriesId"] = "x";
  expect_api_error(svc.handle_edit(j.dump()), 400, "invalid_request");
}

TEST(Service, EditBySeriesId) {
  Service svc({});
  svc.set_state(tiny_state());
  const auto ds = synth::generate_dataset(fixtures::tiny_synth(24, 2));
  const auto id = ds.series[0].id;
  svc.set_dataset(ds);
  json j;
  j["seriesId"] = id;
  j["instruction"] = "No trend.";
  j["weights"] = {0.5};
  const auto r = svc.handle_edit(j.dump());
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_EQ(json::parse(r.body)["edits"][0]["values"].size(), 24u);
}

TEST(Service, Embed) {
  Service svc({});
  svc.set_state(tiny_state());
  const auto r = svc.handle_embed(R"({"text":"No trend."})");
  ASSERT_EQ(r.status, 200);
  EXPECT_NEAR(json::parse(r.body)["norm"].get<double>(), 1.0, 1e-9);
  expect_api_error(svc.handle_embed(R"({"text":""})"), 400, "invalid_request");
}

TEST(Service, Sample) {
  Service svc({});
  svc.set_state(tiny_state());
  svc.set_dataset(synth::generate_dataset(fixtures::tiny_synth(24, 3)));
  const auto any = svc.handle_sample({});
  ASSERT_EQ(any.status, 200);
  EXPECT_EQ(json::parse(any.body)["values"].size(), 24u);
  const auto a = svc.handle_sample({{"attributes", "trend:flat,shift:none"}, {"seed", "3"}});
  const auto b = svc.handle_sample({{"attributes", "trend:flat,shift:none"}, {"seed", "3"}});
  if (a.status == 200) {
    EXPECT_EQ(a.body, b.body);
    EXPECT_EQ(json::parse(a.body)["attributes"]["trend"], "flat");
  } else {
    expect_api_error(a, 404, "no_match");
  }
  expect_api_error(svc.handle_sample({{"attributes", "trend:sideways"}}), 404, "no_match");
  expect_api_error(svc.handle_sample({{"attributes", "trend"}}), 400, "invalid_filter");
  expect_api_error(svc.handle_sample({{"seed", "-x"}}), 400, "invalid_seed");
}

TEST(ServiceHttp, ConcurrentIdenticalEditsAreByteIdentical) {
  Service svc({.host = "127.0.0.1", .port = 0});
  svc.set_state(tiny_state());
  const int port = svc.bind();
  std::thread server([&] { svc.run(); });
  while (!svc.running()) std::this_thread::sleep_for(std::chrono::milliseconds(5));

  const std::string body = edit_body({0.0, 0.3, 0.9});
  std::vector<std::string> bodies(32);
  std::vector<int> statuses(32, 0);
  std::vector<std::thread> clients;
  for (int i = 0; i < 32; ++i) {
    clients.emplace_back([&, i] {
      httplib::Client cli("127.0.0.1", port);
      cli.set_read_timeout(60, 0);
      if (auto res = cli.Post("/api/edit", body, "application/json")) {
        statuses[i] = res->status;
        bodies[i] = res->body;
      }
    });
  }
  for (auto& c : clients) c.join();
  for (int i = 0; i < 32; ++i) {
    EXPECT_EQ(statuses[i], 200);
    EXPECT_EQ(bodies[i], bodies[0]);
  }
  const auto j = json::parse(bodies[0]);
  for (const auto& e : j["edits"]) EXPECT_EQ(e["values"].size(), 24u);

  httplib::Client cli("127.0.0.1", port);
  const auto bad = cli.Post("/api/edit", "{", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body)["code"], "invalid_json");
  const auto missing = cli.Get("/api/nothing-here");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body)["code"], "not_found");
  const auto health = cli.Get("/api/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);

  svc.stop();
  server.join();
}

TEST(ApiError, Shape) {
  const auto j = json::parse(api_error("x", "y", R"({"a":1})"));
  EXPECT_EQ(j["code"], "x");
  EXPECT_EQ(j["message"], "y");
  EXPECT_EQ(j["details"]["a"], 1);
}
