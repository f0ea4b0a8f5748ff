#include "brachy/http_service.hpp"

#include <httplib.h>

#include <thread>

namespace brachy {

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Conflict:
    case ErrorCode::State: return 409;
    case ErrorCode::Validation:
    case ErrorCode::Degenerate: return 422;
    case ErrorCode::Io:
    case ErrorCode::Corruption:
    case ErrorCode::Integrity: return 500;
    default: return 400;
  }
}

namespace {

void send_json(httplib::Response& res, const Json& j, int status = 200) {
  res.status = status;
  res.set_content(dump(j), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  send_json(res, {{"error", {{"code", std::string(to_string(code))}, {"message", message}}}}, http_status(code));
}

Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    return Json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("request body is not JSON: ") + e.what());
  }
}

Json query_json(const httplib::Request& req) {
  Json q = Json::object();
  for (const auto& [k, v] : req.params) {
    if (k == "axis" || k == "index") {
      try {
        q[k] = std::stoi(v);
      } catch (const std::exception&) {
        fail(ErrorCode::InvalidArgument, "query parameter '" + k + "' must be an integer");
      }
    } else {
      q[k] = v;
    }
  }
  return q;
}

using Body = std::function<Json(const httplib::Request&, const std::string& case_id)>;

httplib::Server::Handler guarded(Body fn, int ok_status = 200) {
  return [fn = std::move(fn), ok_status](const httplib::Request& req, httplib::Response& res) {
    try {
      const std::string id = req.matches.size() > 1 ? std::string(req.matches[1]) : std::string();
      send_json(res, fn(req, id), ok_status);
    } catch (const Error& e) {
      send_error(res, e.code(), e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, ErrorCode::Parse, e.what());
    }
  };
}

}  // namespace

struct HttpService::Impl {
  Workstation& ws;
  HttpOptions options;
  httplib::Server server;
  std::thread thread;
  int port = 0;

  Impl(Workstation& w, HttpOptions o) : ws(w), options(std::move(o)) {}

  void routes() {
    if (options.allow_any_origin) {
      server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                  {"Access-Control-Allow-Methods", "GET, POST, PATCH, OPTIONS"},
                                  {"Access-Control-Allow-Headers", "Content-Type"}});
      server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    }
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        send_error(res, ErrorCode::Io, e.what());
      }
    });

    const std::string c = R"(/cases/([A-Za-z0-9._-]+))";
    server.Get("/health", guarded([](auto&, auto&) { return Json{{"schema", kJsonSchema}, {"status", "ok"}}; }));
    server.Get("/devices", guarded([this](auto&, auto&) { return ws.devices().to_json(); }));
    server.Get("/cases", guarded([this](auto&, auto&) { return ws.list_cases(); }));
    server.Post("/cases", guarded([this](auto& req, auto&) { return ws.create_case(parse_body(req)); }, 201));
    server.Get(c, guarded([this](auto&, auto& id) { return ws.get_case(id); }));
    server.Get(c + "/artifacts", guarded([this](auto&, auto& id) {
                 const CaseRecord rec = ws.archive().record(id);
                 Json list = Json::array();
                 for (const auto& e : rec.artifacts) {
                   Json j = to_json(e.ref);
                   j["sequence"] = e.sequence;
                   j["stored_at"] = e.stored_at;
                   list.push_back(j);
                 }
                 return Json{{"schema", kJsonSchema}, {"case_id", id}, {"artifacts", list}};
               }));
    server.Post(c + "/volumes", guarded([this](auto& req, auto& id) {
                  const PlanStage stage = parse_plan_stage(req.has_param("stage") ? req.get_param_value("stage") : "PRE");
                  const ArtifactKind kind =
                      parse_artifact_kind(req.has_param("kind") ? req.get_param_value("kind") : "VOLUME");
                  MrProtocol protocol = MrProtocol::T2;
                  if (req.has_param("protocol")) {
                    const std::string p = req.get_param_value("protocol");
                    if (p == "T1") protocol = MrProtocol::T1;
                    else if (p != "T2") fail(ErrorCode::InvalidArgument, "protocol must be T1 or T2");
                  }
                  const auto* data = reinterpret_cast<const std::uint8_t*>(req.body.data());
                  return ws.upload(id, stage, kind, {data, req.body.size()}, protocol);
                }, 201));
    server.Post(c + "/eligibility",
                guarded([this](auto& req, auto& id) { return ws.set_eligibility(id, parse_body(req)); }));
    server.Post(c + "/advance", guarded([this](auto& req, auto& id) { return ws.advance(id, parse_body(req)); }));
    server.Post(c + "/device-comparison",
                guarded([this](auto& req, auto& id) { return ws.compare_devices(id, parse_body(req)); }));
    server.Post(c + "/registration",
                guarded([this](auto& req, auto& id) { return ws.register_device(id, parse_body(req)); }));
    server.Get(c + "/plan", guarded([this](auto&, auto& id) { return ws.get_plan(id); }));
    server.Patch(c + "/plan", guarded([this](auto& req, auto& id) { return ws.edit_plan(id, parse_body(req)); }));
    server.Get(c + "/followup", guarded([this](auto&, auto& id) { return ws.followup(id); }));
    server.Get(c + "/slice", guarded([this](auto& req, auto& id) { return ws.slice(id, query_json(req)); }));
  }
};

HttpService::HttpService(Workstation& workstation, HttpOptions options)
    : impl_(std::make_unique<Impl>(workstation, std::move(options))) {
  impl_->routes();
}

HttpService::~HttpService() { stop(); }

void HttpService::start() {
  auto& s = impl_->server;
  if (impl_->options.port == 0) {
    impl_->port = s.bind_to_any_port(impl_->options.bind_address);
    if (impl_->port <= 0) fail(ErrorCode::Io, "cannot bind HTTP service on " + impl_->options.bind_address);
  } else {
    if (!s.bind_to_port(impl_->options.bind_address, impl_->options.port))
      fail(ErrorCode::Io, "cannot bind HTTP service on " + impl_->options.bind_address + ":" +
                              std::to_string(impl_->options.port));
    impl_->port = impl_->options.port;
  }
  impl_->thread = std::thread([&s] { s.listen_after_bind(); });
  s.wait_until_ready();
}

void HttpService::stop() {
  if (!impl_ || !impl_->thread.joinable()) return;
  impl_->server.stop();
  impl_->thread.join();
}

std::uint16_t HttpService::port() const { return static_cast<std::uint16_t>(impl_->port); }

}  // namespace brachy
