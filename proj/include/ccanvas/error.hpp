#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ccanvas {

enum class ErrorCode {
  invalid_argument,
  not_found,
  already_detached,
  not_executable,
  conflict,
  malformed_json,
  unsupported_version,
  schema_violation,
  invariant_violation,
  frame_too_large,
  protocol_error,
  handshake_timeout,
  version_mismatch,
  spawn_failed,
  fork_failed,
  environment_terminated,
  worker_failure,
  timeout,
  io_error,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::already_detached: return "already_detached";
    case ErrorCode::not_executable: return "not_executable";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::malformed_json: return "malformed_json";
    case ErrorCode::unsupported_version: return "unsupported_version";
    case ErrorCode::schema_violation: return "schema_violation";
    case ErrorCode::invariant_violation: return "invariant_violation";
    case ErrorCode::frame_too_large: return "frame_too_large";
    case ErrorCode::protocol_error: return "protocol_error";
    case ErrorCode::handshake_timeout: return "handshake_timeout";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::spawn_failed: return "spawn_failed";
    case ErrorCode::fork_failed: return "fork_failed";
    case ErrorCode::environment_terminated: return "environment_terminated";
    case ErrorCode::worker_failure: return "worker_failure";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

inline std::optional<ErrorCode> error_code_from_string(std::string_view name) noexcept {
  for (int i = 0; i <= static_cast<int>(ErrorCode::io_error); ++i) {
    auto code = static_cast<ErrorCode>(i);
    if (to_string(code) == name) return code;
  }
  return std::nullopt;
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ccanvas
