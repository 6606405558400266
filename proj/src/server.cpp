#include "dualpath/server.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "dualpath/errors.hpp"

namespace dualpath::server {

using nlohmann::json;

json ServerConfig::to_json() const { return {{"host", host}, {"port", port}, {"threads", threads}}; }

ServerConfig ServerConfig::from_json(const json& j) {
  try {
    ServerConfig c;
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.threads = j.value("threads", c.threads);
    if (c.port < 0 || c.port > 65535) throw DataError("server port out of range: " + std::to_string(c.port));
    if (c.threads < 1) throw DataError("server needs at least one HTTP thread");
    return c;
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed server config: ") + ex.what());
  }
}

void ServerConfig::apply_env() {
  if (const char* h = std::getenv("DUALPATH_HOST")) host = h;
  try {
    if (const char* p = std::getenv("DUALPATH_PORT")) port = std::stoi(p);
    if (const char* t = std::getenv("DUALPATH_HTTP_THREADS")) threads = static_cast<std::size_t>(std::stoul(t));
  } catch (const std::exception&) {
    throw DataError("DUALPATH_PORT / DUALPATH_HTTP_THREADS must be integers");
  }
}

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, {{"error", message}});
}

/// Runs `fn`, translating library errors into HTTP statuses.
template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const BackpressureError& e) {
    res.set_header("Retry-After", "1");
    reply_error(res, 503, e.what());
  } catch (const ConflictError& e) {
    reply_error(res, 409, e.what());
  } catch (const NotFoundError& e) {
    reply_error(res, 404, e.what());
  } catch (const ServiceError& e) {
    reply_error(res, 503, e.what());
  } catch (const DataError& e) {
    reply_error(res, 400, e.what());
  } catch (const ContractError& e) {
    reply_error(res, 400, e.what());
  } catch (const json::exception& e) {
    reply_error(res, 400, std::string("malformed JSON: ") + e.what());
  } catch (const std::exception& e) {
    reply_error(res, 500, e.what());
  }
}

json parse_body(const httplib::Request& req) {
  auto j = json::parse(req.body, nullptr, false);
  if (j.is_discarded()) throw DataError("request body is not valid JSON");
  return j;
}

}  // namespace

struct Server::Impl {
  pipeline::Pipeline& pipeline;
  ServerConfig config;
  httplib::Server http;
  std::thread listener;
  std::atomic<bool> running{false};
  int bound_port = -1;
  std::mutex mu;
  std::condition_variable stopped;

  Impl(pipeline::Pipeline& p, ServerConfig c) : pipeline(p), config(std::move(c)) {}

  void routes();
};

void Server::Impl::routes() {
  const auto& schema = pipeline.schema();
  auto& p = pipeline;

  http.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", std::string("Content-Type, ") + kReviewerHeader);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
  });
  http.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  http.Post("/transactions", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto t = codec::transaction_from_json(parse_body(req), schema);
      reply(res, 200, p.process(t).to_json());
    });
  });

  http.Post("/transactions/batch", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = parse_body(req);
      const auto& list = body.is_array() ? body : body.at("transactions");
      std::vector<codec::Transaction> batch;
      for (const auto& j : list) batch.push_back(codec::transaction_from_json(j, schema));
      json out = json::array();
      for (const auto& d : p.process_batch(batch)) out.push_back(d.to_json());
      reply(res, 200, {{"decisions", out}});
    });
  });

  http.Get("/reviews", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::optional<pipeline::ReviewState> filter = pipeline::ReviewState::open;
      if (req.has_param("state")) {
        const auto s = req.get_param_value("state");
        filter = s == "all" ? std::nullopt : std::optional(pipeline::state_from_name(s));
      }
      const double now = events::now_seconds();
      json items = json::array();
      for (const auto& item : p.reviews(filter)) {
        auto j = item.to_json(schema);
        j["age_s"] = now - item.enqueued_at;
        items.push_back(std::move(j));
      }
      reply(res, 200, {{"items", items}, {"tau", p.snapshot()->threshold.tau}});
    });
  });

  http.Get("/reviews/:id", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto& id = req.path_params.at("id");
      const auto item = p.review(id);
      if (!item) throw NotFoundError("no review item '" + id + "'");
      reply(res, 200, item->to_json(schema));
    });
  });

  http.Post("/reviews/:id/resolve", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto& id = req.path_params.at("id");
      const auto body = parse_body(req);
      const auto verdict = pipeline::verdict_from_name(body.at("verdict").get<std::string>());
      std::string reviewer = body.value("reviewer", std::string());
      if (reviewer.empty()) reviewer = req.get_header_value(kReviewerHeader);
      if (reviewer.empty()) throw DataError(std::string("reviewer missing: send it in the body or the ") + kReviewerHeader + " header");
      const auto item = p.resolve(id, verdict, reviewer, body.value("tag", std::string()));
      reply(res, 200, item.to_json(schema));
    });
  });

  http.Get("/explanations/:txid", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto& id = req.path_params.at("txid");
      const auto item = p.review(id);
      if (!item) {
        reply(res, 404,
              {{"error", "not explained: below threshold or unknown transaction"}, {"transaction_id", id}});
        return;
      }
      if (item->explanation) {
        auto j = item->explanation->to_json();
        j["score_model_version"] = item->score.model_version;
        reply(res, 200, j);
      } else if (!item->explanation_error.empty()) {
        reply(res, 422, {{"status", "failed"}, {"error", item->explanation_error}, {"transaction_id", id}});
      } else {
        reply(res, 202, {{"status", "pending"}, {"transaction_id", id}});
      }
    });
  });

  http.Get("/metrics", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, p.metrics().to_json()); });
  });

  http.Get("/health", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      const auto snap = p.snapshot();
      reply(res, 200,
            {{"status", "ok"},
             {"tau", snap->threshold.tau},
             {"quantile", snap->threshold.quantile},
             {"versions", {{"vae", snap->vae_version()}, {"gan", snap->gan_version()}, {"generation", snap->generation}}},
             {"pending_policy", pipeline::policy_name(p.config().pending_policy)},
             {"retraining_active", p.retraining_active()}});
    });
  });

  http.Post("/retrain", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      if (!p.start_retraining_async()) throw ConflictError("a retraining cycle is already running");
      reply(res, 202, {{"status", "started"}});
    });
  });
}

Server::Server(pipeline::Pipeline& pipeline, ServerConfig config)
    : impl_(std::make_unique<Impl>(pipeline, std::move(config))) {
  const auto n = impl_->config.threads;
  impl_->http.new_task_queue = [n] { return new httplib::ThreadPool(n); };
  // httplib's default adds SO_REUSEPORT, which lets a second instance share the port.
  impl_->http.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  impl_->routes();
}

Server::~Server() { stop(); }

int Server::start() {
  auto& s = *impl_;
  if (s.running) return s.bound_port;
  if (s.config.port == 0) {
    s.bound_port = s.http.bind_to_any_port(s.config.host);
  } else {
    s.bound_port = s.http.bind_to_port(s.config.host, s.config.port) ? s.config.port : -1;
  }
  if (s.bound_port < 0) {
    throw ServiceError("cannot bind " + s.config.host + ":" + std::to_string(s.config.port));
  }
  s.running = true;
  s.listener = std::thread([&s] {
    s.http.listen_after_bind();
    {
      std::lock_guard lock(s.mu);
      s.running = false;
    }
    s.stopped.notify_all();
  });
  s.http.wait_until_ready();
  return s.bound_port;
}

void Server::stop() {
  auto& s = *impl_;
  s.http.stop();
  if (s.listener.joinable()) s.listener.join();
}

void Server::wait() {
  auto& s = *impl_;
  std::unique_lock lock(s.mu);
  s.stopped.wait(lock, [&] { return !s.running.load(); });
}

bool Server::running() const { return impl_->running.load(); }
int Server::port() const { return impl_->bound_port; }

}  // namespace dualpath::server
