#include "brachy/common.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>

namespace brachy {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Format: return "format";
    case ErrorCode::Truncation: return "truncation";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Io: return "io";
    case ErrorCode::Degenerate: return "degenerate";
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::Range: return "range";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::Conflict: return "conflict";
    case ErrorCode::State: return "state";
    case ErrorCode::Integrity: return "integrity";
    case ErrorCode::Corruption: return "corruption";
    case ErrorCode::Encoding: return "encoding";
    case ErrorCode::Validation: return "validation";
  }
  return "unknown";
}

std::string utc_timestamp() {
  std::time_t t = 0;
  const char* epoch = std::getenv("SOURCE_DATE_EPOCH");
  if (epoch && *epoch) {
    char* end = nullptr;
    const long long v = std::strtoll(epoch, &end, 10);
    if (*end != '\0') fail(ErrorCode::InvalidArgument, "SOURCE_DATE_EPOCH is not an integer");
    t = static_cast<std::time_t>(v);
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace brachy
