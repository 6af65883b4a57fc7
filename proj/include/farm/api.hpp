#pragma once

// Local HTTP/JSON surface for the operator panel and tooling. Reads come
// from immutable snapshots; writes are validated here and handed to the
// control loop through its message channel.

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>

#include "farm/compensation.hpp"
#include "farm/datastore.hpp"
#include "farm/farm_loop.hpp"

namespace farm::api {

inline constexpr const char* kDefaultBind = "127.0.0.1:8642";

// What the HTTP layer needs from whoever hosts it (live loop or replay).
struct Context {
  std::function<std::shared_ptr<const StateSnapshot>()> snapshot;
  const Datastore* datastore = nullptr;
  const CompModel* model = nullptr;
  std::function<void(ControlMessage)> submit;  // may be empty (read-only)
  std::filesystem::path ui_dir;                // static bundle, optional
};

inline json error_body(std::string_view code, json detail = nullptr) {
  return {{"error", code}, {"detail", std::move(detail)}};
}

inline void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline json model_summary(const CompModel& model, bool full) {
  json channels = json::array();
  for (const auto& m : model.channels) {
    if (!m) continue;
    json dims = json::array();
    dims.push_back(m->net.layers().front().inputs);
    for (const auto& l : m->net.layers()) dims.push_back(l.outputs);
    std::string arch;
    for (std::size_t i = 0; i < dims.size(); ++i) arch += (i ? "->" : "") + std::to_string(dims[i].get<std::size_t>());
    json acts = json::array();
    for (const auto& l : m->net.layers()) acts.push_back(to_string(l.act));
    channels.push_back({{"channel", to_string(m->channel)},
                        {"architecture", arch},
                        {"layers", dims},
                        {"activations", acts},
                        {"parameters", m->net.parameter_count()},
                        {"train_mse", m->train_mse},
                        {"val_mse", m->val_mse}});
  }
  json j = {{"channels", channels}};
  if (full) j["model"] = to_json(model);
  return j;
}

inline std::optional<std::int64_t> int_param(const httplib::Request& req, const char* name, std::int64_t fallback, bool& bad) {
  if (!req.has_param(name)) return fallback;
  const std::string s = req.get_param_value(name);
  std::int64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    bad = true;
    return std::nullopt;
  }
  return v;
}

inline json series_json(const Series& s, std::string_view kind, std::int64_t bucket) {
  json pts = json::array();
  for (const auto& p : s.points) pts.push_back(json::array({p.t, p.v}));
  return {{"key", s.key}, {"kind", kind}, {"bucket", bucket}, {"points", pts}};
}

inline void install_routes(httplib::Server& srv, const Context& ctx) {
  srv.Get("/api/info", [](const httplib::Request&, httplib::Response& res) {
    json ch = json::array(), act = json::array();
    for (Channel c : kAllChannels)
      ch.push_back({{"name", to_string(c)}, {"unit", channel_meta(c).unit}, {"min", channel_meta(c).min}, {"max", channel_meta(c).max}});
    for (Actuator a : kAllActuators) act.push_back({{"name", to_string(a)}, {"continuous", is_continuous(a)}});
    reply(res, 200,
          {{"name", "farmctl"},
           {"api_version", 1},
           {"channels", ch},
           {"actuators", act},
           {"endpoints",
            {"GET /api/info", "GET /api/state", "GET /api/history", "GET /api/recipe", "PUT /api/recipe",
             "POST /api/override", "GET /api/forecast", "GET /api/model"}}});
  });

  srv.Get("/api/state", [ctx](const httplib::Request&, httplib::Response& res) {
    auto snap = ctx.snapshot ? ctx.snapshot() : nullptr;
    if (!snap) return reply(res, 503, error_body("not_ready", "controller has not ticked yet"));
    reply(res, 200, to_json(*snap));
  });

  srv.Get("/api/history", [ctx](const httplib::Request& req, httplib::Response& res) {
    if (!ctx.datastore) return reply(res, 503, error_body("no_datastore"));
    bool bad = false;
    auto from = int_param(req, "from", std::numeric_limits<std::int64_t>::min() / 2, bad);
    auto to = int_param(req, "to", std::numeric_limits<std::int64_t>::max() / 2, bad);
    auto bucket = int_param(req, "bucket", 1, bad);
    if (bad) return reply(res, 400, error_body("bad_request", "from, to and bucket must be integers"));
    if (*from > *to) return reply(res, 400, error_body("bad_request", "from must be <= to"));
    if (*bucket < 1) return reply(res, 400, error_body("bad_request", "bucket must be >= 1"));
    SeriesKind kind = SeriesKind::reading;
    std::string key;
    if (req.has_param("channel")) {
      key = req.get_param_value("channel");
      if (!parse_channel(key)) return reply(res, 400, error_body("bad_request", "unknown channel '" + key + "'"));
    } else if (req.has_param("actuator")) {
      key = req.get_param_value("actuator");
      kind = SeriesKind::command;
      if (!parse_actuator(key)) return reply(res, 400, error_body("bad_request", "unknown actuator '" + key + "'"));
    } else {
      return reply(res, 400, error_body("bad_request", "channel or actuator is required"));
    }
    const Series s = downsample(ctx.datastore->query(kind, key, *from, *to), *bucket);
    reply(res, 200, series_json(s, kind == SeriesKind::reading ? "reading" : "command", *bucket));
  });

  srv.Get("/api/recipe", [ctx](const httplib::Request&, httplib::Response& res) {
    auto snap = ctx.snapshot ? ctx.snapshot() : nullptr;
    if (!snap) return reply(res, 503, error_body("not_ready"));
    json j = to_json(snap->recipe);
    reply(res, 200, {{"recipe", j}, {"t", snap->t}});
  });

  srv.Put("/api/recipe", [ctx](const httplib::Request& req, httplib::Response& res) {
    if (!ctx.submit) return reply(res, 503, error_body("read_only"));
    json body;
    try {
      body = json::parse(req.body);
    } catch (const std::exception& e) {
      return reply(res, 422, error_body("validation", json::array({{{"field", ""}, {"message", e.what()}}})));
    }
    try {
      Recipe r = recipe_from_json(body);
      ctx.submit(RecipeUpdate{std::move(r)});
    } catch (const RecipeError& e) {
      json detail = json::array();
      for (const auto& fe : e.errors) detail.push_back({{"field", fe.field}, {"message", fe.message}});
      return reply(res, 422, error_body("validation", detail));
    } catch (const std::exception& e) {
      return reply(res, 422, error_body("validation", json::array({{{"field", ""}, {"message", e.what()}}})));
    }
    reply(res, 200, {{"accepted", true}});
  });

  srv.Post("/api/override", [ctx](const httplib::Request& req, httplib::Response& res) {
    if (!ctx.submit) return reply(res, 503, error_body("read_only"));
    json detail = json::array();
    std::optional<Actuator> act;
    double level = 0.0, ttl = 0.0;
    try {
      const json body = json::parse(req.body);
      if (!body.contains("actuator") || !body["actuator"].is_string() || !(act = parse_actuator(body["actuator"].get<std::string>())))
        detail.push_back({{"field", "actuator"}, {"message", "unknown actuator"}});
      if (!body.contains("level") || !body["level"].is_number())
        detail.push_back({{"field", "level"}, {"message", "must be a number"}});
      else
        level = body["level"].get<double>();
      if (!body.contains("ttl") || !body["ttl"].is_number())
        detail.push_back({{"field", "ttl"}, {"message", "must be a number"}});
      else
        ttl = body["ttl"].get<double>();
    } catch (const std::exception& e) {
      detail.push_back({{"field", ""}, {"message", e.what()}});
    }
    if (detail.empty() && !is_valid_level(*act, level))
      detail.push_back({{"field", "level"}, {"message", is_continuous(*act) ? "must be within [0,1]" : "must be 0 or 1"}});
    if (detail.empty() && !(ttl > 0.0)) detail.push_back({{"field", "ttl"}, {"message", "must be > 0"}});
    if (!detail.empty()) return reply(res, 422, error_body("validation", detail));
    ctx.submit(OverrideRequest{*act, level, ttl});
    reply(res, 200, {{"accepted", true}});
  });

  srv.Get("/api/forecast", [ctx](const httplib::Request&, httplib::Response& res) {
    auto snap = ctx.snapshot ? ctx.snapshot() : nullptr;
    if (!snap || !snap->forecast) return reply(res, 503, error_body("not_ready", "no forecast computed yet"));
    reply(res, 200, to_json(*snap->forecast));
  });

  srv.Get("/api/model", [ctx](const httplib::Request& req, httplib::Response& res) {
    if (!ctx.model) return reply(res, 404, error_body("no_model", "compensation is off"));
    const bool full = req.has_param("full") && req.get_param_value("full") == "1";
    reply(res, 200, model_summary(*ctx.model, full));
  });

  if (!ctx.ui_dir.empty() && std::filesystem::exists(ctx.ui_dir)) {
    srv.set_mount_point("/", ctx.ui_dir.string());
  } else {
    srv.Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("<!doctype html><title>farmctl</title><p>Operator UI bundle not installed. API at <a href=\"/api/info\">/api/info</a>.</p>",
                      "text/html");
    });
  }
}

inline std::pair<std::string, int> split_bind(const std::string& bind) {
  auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("bind address needs host:port");
  return {bind.substr(0, colon), std::stoi(bind.substr(colon + 1))};
}

// Owns the HTTP server thread.
class Server {
 public:
  explicit Server(Context ctx) : ctx_(std::move(ctx)) { install_routes(http_, ctx_); }
  ~Server() { stop(); }

  // Port 0 picks a free port. Returns the bound port.
  int start(const std::string& bind) {
    auto [host, port] = split_bind(bind);
    if (port == 0) port_ = http_.bind_to_any_port(host);
    else port_ = http_.bind_to_port(host, port) ? port : -1;
    if (port_ < 0) throw std::runtime_error("cannot bind HTTP server to " + bind);
    thread_ = std::thread([this] { http_.listen_after_bind(); });
    http_.wait_until_ready();
    return port_;
  }

  void stop() {
    http_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  Context ctx_;
  httplib::Server http_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace farm::api
