#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace brachy {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using PointCloud = std::vector<Vec3>;

/// Error categories shared by every module. The CLI maps them to exit codes
/// and the HTTP service maps them to status codes.
enum class ErrorCode {
  Format,
  Truncation,
  Parse,
  Io,
  Degenerate,
  InvalidArgument,
  Range,
  NotFound,
  Conflict,
  State,
  Integrity,
  Corruption,
  Encoding,
  Validation,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// ISO-8601 UTC time, "YYYY-MM-DDTHH:MM:SSZ". SOURCE_DATE_EPOCH, when set,
/// replaces the clock so repeated runs produce identical output.
std::string utc_timestamp();

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace brachy
