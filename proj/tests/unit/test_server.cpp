#include <doctest.h>

#include <chrono>
#include <thread>

#include <httplib.h>

#include "dualpath/errors.hpp"
#include "dualpath/server.hpp"
#include "support/model_fixture.hpp"

using namespace dualpath;
using nlohmann::json;
using testsupport::model_fixture;
using testsupport::outlier;

namespace {

struct Running {
  pipeline::Pipeline pipeline;
  server::Server server;
  httplib::Client client;

  explicit Running(pipeline::PipelineConfig cfg = {})
      : pipeline(model_fixture().bundle, [&] {
          cfg.low_priority_background = false;
          return cfg;
        }()),
        server(pipeline, {"127.0.0.1", 0, 4}),
        client("127.0.0.1", server.start()) {}

  json post(const std::string& path, const json& body, int expect, httplib::Headers headers = {}) {
    auto r = client.Post(path, headers, body.dump(), "application/json");
    REQUIRE(r);
    CHECK(r->status == expect);
    return json::parse(r->body);
  }
  json get(const std::string& path, int expect) {
    auto r = client.Get(path);
    REQUIRE(r);
    CHECK(r->status == expect);
    return json::parse(r->body);
  }
};

json tx_json(const codec::Transaction& t) { return codec::to_json(t, codec::TransactionSchema::banking_default()); }

codec::Transaction approved(std::uint64_t seed) {
  const auto& f = model_fixture();
  for (const auto& t : sim::generate_stream(f.profiles, {}, 50, seed)) {
    if (vae::score(*f.bundle.vae, f.bundle.threshold, t).verdict == vae::Verdict::normal) return t;
  }
  FAIL("no approved transaction");
  return {};
}

}  // namespace

TEST_CASE("health reports tau and model versions") {
  Running s;
  const auto h = s.get("/health", 200);
  const auto snap = s.pipeline.snapshot();
  CHECK(h["status"] == "ok");
  CHECK(h["tau"].get<double>() == snap->threshold.tau);
  CHECK(h["versions"]["vae"].get<std::uint64_t>() == snap->vae_version());
  CHECK(h["versions"]["gan"].get<std::uint64_t>() == 0);
  CHECK(h["pending_policy"] == "hold");
}

TEST_CASE("scoring, explanations and review round trip") {
  Running s;
  const auto ok = approved(3);
  const auto d = s.post("/transactions", tx_json(ok), 200);
  CHECK(d["outcome"] == "approve");
  const auto none = s.get("/explanations/" + ok.id, 404);
  CHECK(none["error"].get<std::string>().find("not explained: below threshold") != std::string::npos);

  const auto far = outlier(model_fixture(), "srv-1");
  const auto flagged = s.post("/transactions", tx_json(far), 200);
  CHECK(flagged["outcome"] == "pending-review");
  CHECK(flagged["explanation_ref"] == "/explanations/srv-1");

  s.pipeline.wait_for_explanations();
  const auto e = s.get("/explanations/srv-1", 200);
  double sum = e["base"].get<double>();
  for (const auto& f : e["features"]) sum += f["phi"].get<double>();
  CHECK(std::abs(sum - e["output"].get<double>()) <= 1e-9);

  const auto queue = s.get("/reviews", 200);
  REQUIRE(queue["items"].size() == 1);
  CHECK(queue["items"][0]["id"] == "srv-1");
  CHECK(queue["items"][0].contains("age_s"));
  CHECK(s.get("/reviews/srv-1", 200)["state"] == "open");
  s.get("/reviews/nope", 404);

  const auto depth = s.get("/metrics", 200)["buffer"]["depth"].get<std::size_t>();
  const auto resolved = s.post("/reviews/srv-1/resolve", {{"verdict", "confirmed-fraud"}, {"reviewer", "alice"}}, 200);
  CHECK(resolved["state"] == "confirmed-fraud");
  CHECK(s.get("/reviews", 200)["items"].empty());
  CHECK(s.get("/metrics", 200)["buffer"]["depth"].get<std::size_t>() == depth + 1);
  CHECK(s.get("/reviews?state=confirmed-fraud", 200)["items"].size() == 1);

  const auto conflict = s.post("/reviews/srv-1/resolve", {{"verdict", "false-positive"}, {"reviewer", "bob"}}, 409);
  CHECK(conflict.contains("error"));
  CHECK(s.get("/reviews/srv-1", 200)["state"] == "confirmed-fraud");
  s.post("/reviews/none/resolve", {{"verdict", "false-positive"}, {"reviewer", "bob"}}, 404);
}

TEST_CASE("reviewer from header, malformed requests") {
  Running s;
  s.post("/transactions", tx_json(outlier(model_fixture(), "h-1")), 200);
  s.post("/reviews/h-1/resolve", {{"verdict", "false-positive"}}, 400);
  s.post("/reviews/h-1/resolve", {{"verdict", "maybe"}, {"reviewer", "x"}}, 400);
  const auto r = s.post("/reviews/h-1/resolve", {{"verdict", "false-positive"}}, 200, {{server::kReviewerHeader, "carol"}});
  CHECK(r["reviewer"] == "carol");

  auto bad = s.client.Post("/transactions", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  s.post("/transactions", {{"id", "x"}}, 400);
  s.get("/reviews?state=bogus", 400);
}

TEST_CASE("pending and failed explanation states") {
  pipeline::PipelineConfig cfg;
  cfg.explain.permutations = 20000;
  Running s(cfg);
  auto broken = approved(5);
  broken.id = "broken";
  broken.categorical[codec::banking::kMcc] = 99;
  s.post("/transactions", tx_json(broken), 200);
  const auto failed = s.get("/explanations/broken", 422);
  CHECK(failed["status"] == "failed");

  // Queue several so at least the last is still pending when asked.
  for (int i = 0; i < 6; ++i) s.post("/transactions", tx_json(outlier(model_fixture(), "p" + std::to_string(i))), 200);
  auto r = s.client.Get("/explanations/p5");
  REQUIRE(r);
  CHECK((r->status == 202 || r->status == 200));
  if (r->status == 202) CHECK(json::parse(r->body)["status"] == "pending");
}

TEST_CASE("batch scoring and backpressure") {
  pipeline::PipelineConfig cfg;
  cfg.queue_capacity = 1;
  Running s(cfg);
  const auto a = approved(7), b = approved(8);
  const auto out = s.post("/transactions/batch", {{"transactions", {tx_json(a), tx_json(b)}}}, 200);
  CHECK(out["decisions"].size() == 2);
  s.post("/transactions/batch", json::array({tx_json(approved(9))}), 200);

  s.post("/transactions", tx_json(outlier(model_fixture(), "q1")), 200);
  auto r = s.client.Post("/transactions", tx_json(outlier(model_fixture(), "q2")).dump(), "application/json");
  REQUIRE(r);
  CHECK(r->status == 503);
  CHECK(r->get_header_value("Retry-After") == "1");
  s.post("/transactions", tx_json(outlier(model_fixture(), "q1")), 409);
}

TEST_CASE("CORS, retrain trigger, stop") {
  Running s;
  auto opt = s.client.Options("/reviews");
  REQUIRE(opt);
  CHECK(opt->status == 204);
  CHECK(opt->get_header_value("Access-Control-Allow-Origin") == "*");

  // No retraining resources: the cycle starts and fails at setup.
  s.post("/retrain", json::object(), 202);
  const auto report = s.pipeline.wait_for_retraining();
  REQUIRE(report.has_value());
  CHECK_FALSE(report->succeeded);
  CHECK(s.get("/metrics", 200)["retraining"]["failed"] == 1);

  CHECK(s.server.running());
  s.server.stop();
  CHECK_FALSE(s.server.running());
}

TEST_CASE("config: env overrides and an occupied port") {
  server::ServerConfig c;
  setenv("DUALPATH_PORT", "9123", 1);
  setenv("DUALPATH_HTTP_THREADS", "3", 1);
  c.apply_env();
  unsetenv("DUALPATH_PORT");
  unsetenv("DUALPATH_HTTP_THREADS");
  CHECK(c.port == 9123);
  CHECK(c.threads == 3);
  CHECK(server::ServerConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK_THROWS_AS(server::ServerConfig::from_json({{"port", 70000}}), DataError);

  Running s;
  pipeline::Pipeline other(model_fixture().bundle, {});
  server::Server clash(other, {"127.0.0.1", s.server.port(), 1});
  CHECK_THROWS_AS(clash.start(), ServiceError);
}
