#include "ptl/server.hpp"

#include <httplib.h>

#include <chrono>
#include <filesystem>
#include <stdexcept>

#include "ptl/error.hpp"

namespace ptl {

using nlohmann::json;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json threshold_json(const std::string& id, const ThresholdPair& t) {
  return {{"image_id", id},
          {"x_t_neg", t.neg.mean},
          {"x_t_pos", t.pos.mean},
          {"neg_ci", {t.neg.ci_low, t.neg.ci_high}},
          {"pos_ci", {t.pos.ci_low, t.pos.ci_high}},
          {"n_observers", std::max(t.neg.n_observers, t.pos.n_observers)}};
}

// Runs a handler and maps library errors onto HTTP statuses.
template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const SessionError& e) {
    const int status = e.kind() == SessionError::Kind::NotFound ? 404 : e.kind() == SessionError::Kind::Conflict ? 409 : 400;
    send(res, status, {{"error", e.what()}});
  } catch (const json::exception& e) {
    send(res, 400, {{"error", std::string("bad request body: ") + e.what()}});
  } catch (const DataError& e) {
    send(res, 422, {{"error", e.what()}});
  } catch (const std::exception& e) {
    send(res, 500, {{"error", e.what()}});
  }
}

}  // namespace

struct ApiServer::Impl {
  SessionStore& store;
  ServerOptions options;
  httplib::Server server;
  int port = -1;

  Impl(SessionStore& s, ServerOptions o) : store(s), options(std::move(o)) { routes(); }

  void routes() {
    server.Post("/api/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = req.body.empty() ? json::object() : json::parse(req.body);
        const auto observer = body.at("observer_id").get<std::string>();
        std::vector<std::string> images;
        if (body.contains("images")) images = body["images"].get<std::vector<std::string>>();
        const auto id = store.create(observer, images);
        send(res, 201, store.status(id));
      });
    });
    server.Get(R"(/api/sessions/([^/]+)/trial)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send(res, 200, store.next_trial(req.matches[1]).public_json()); });
    });
    server.Post(R"(/api/sessions/([^/]+)/response)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = json::parse(req.body);
        const std::string id = req.matches[1];
        store.submit_response(id, body.at("trial_id").get<std::string>(),
                              parse_side(body.at("side").get<std::string>()), now_seconds());
        send(res, 200, {{"accepted", true}, {"session", store.status(id)}});
      });
    });
    server.Get(R"(/api/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send(res, 200, store.status(req.matches[1])); });
    });
    server.Get("/api/thresholds", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        const auto fits = store.all_fits();
        json rows = json::array();
        for (const auto& r : pool_all(fits, options.n_bootstrap, options.seed))
          rows.push_back(threshold_json(r.image_id, r.thresholds));
        send(res, 200, rows);
      });
    });
    server.Get(R"(/api/thresholds/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = req.matches[1];
        const auto fits = store.all_fits();
        try {
          send(res, 200, threshold_json(id, pool_thresholds(fits, id, options.n_bootstrap, options.seed)));
        } catch (const DataError& e) {
          send(res, 404, {{"error", e.what()}});
        }
      });
    });
    if (!options.static_dir.empty()) {
      if (!std::filesystem::is_directory(options.static_dir))
        throw DataError("static directory '" + options.static_dir + "' does not exist");
      server.set_mount_point("/", options.static_dir);
    }
  }
};

ApiServer::ApiServer(SessionStore& store, ServerOptions options)
    : impl_(std::make_unique<Impl>(store, std::move(options))) {}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind() {
  auto& o = impl_->options;
  impl_->port = o.port == 0 ? impl_->server.bind_to_any_port(o.host) : (impl_->server.bind_to_port(o.host, o.port) ? o.port : -1);
  if (impl_->port < 0) throw std::runtime_error("cannot bind " + o.host + ":" + std::to_string(o.port));
  return impl_->port;
}

void ApiServer::serve() {
  if (impl_->port < 0) bind();
  impl_->server.listen_after_bind();
}

void ApiServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace ptl
