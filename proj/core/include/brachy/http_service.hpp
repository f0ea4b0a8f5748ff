#pragma once

#include "brachy/workstation.hpp"

#include <cstdint>
#include <memory>
#include <string>

namespace brachy {

/// HTTP status for an error category: 404 NotFound, 409 Conflict/State,
/// 422 Validation/Degenerate, 500 storage failures, 400 otherwise.
int http_status(ErrorCode code);

struct HttpOptions {
  std::string bind_address = "127.0.0.1";
  std::uint16_t port = 8080;  // 0 picks an ephemeral port
  /// Sends Access-Control-Allow-Origin: * for a UI served from another origin.
  bool allow_any_origin = true;
};

/// JSON API over a Workstation. Errors come back as
/// {"error": {"code": "...", "message": "..."}} with the mapped status.
class HttpService {
 public:
  HttpService(Workstation& workstation, HttpOptions options = {});
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  /// Binds and serves on a background thread. Throws ErrorCode::Io on bind failure.
  void start();
  void stop();
  std::uint16_t port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace brachy
