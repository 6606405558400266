#pragma once

#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "dualpath/pipeline.hpp"

namespace dualpath::server {

struct ServerConfig {
  std::string host = "127.0.0.1";
  /// 0 binds any free port.
  int port = 8080;
  std::size_t threads = 8;

  nlohmann::json to_json() const;
  static ServerConfig from_json(const nlohmann::json& j);
  /// Overrides from DUALPATH_HOST, DUALPATH_PORT and DUALPATH_HTTP_THREADS.
  void apply_env();
};

/// Header carrying the reviewer id when the resolve body omits it.
inline constexpr const char* kReviewerHeader = "X-Reviewer-Id";

/// HTTP front end over a Pipeline. Endpoints are documented in docs/api.md.
class Server {
 public:
  Server(pipeline::Pipeline& pipeline, ServerConfig config);
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts serving on a background thread. Returns the bound
  /// port. Throws ServiceError when the port cannot be bound.
  int start();
  /// Stops accepting requests and joins the listener.
  void stop();
  /// Blocks until stop() is called from another thread.
  void wait();
  bool running() const;
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dualpath::server
