#pragma once

#include <memory>
#include <string>

#include "ptl/session.hpp"

namespace ptl {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;             // 0 picks a free port
  std::string static_dir;      // web UI bundle; empty disables static serving
  int n_bootstrap = 1000;
  std::uint64_t seed = 1;
};

/// JSON-over-HTTP front end for a SessionStore:
///   POST /api/sessions                  {"observer_id", "images"?}
///   GET  /api/sessions/{id}/trial
///   POST /api/sessions/{id}/response    {"trial_id", "side": "left"|"right"}
///   GET  /api/sessions/{id}
///   GET  /api/thresholds[/{image_id}]
class ApiServer {
 public:
  ApiServer(SessionStore& store, ServerOptions options);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds and returns the port; throws std::runtime_error on failure.
  int bind();
  /// Serves until stop(); call after bind().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ptl
