#pragma once

// Newline-delimited JSON protocol spoken between the orchestrator and
// interpreter workers. One JSON object per LF-terminated line; binary
// content travels as base64 text. Version "1".

#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccanvas/canvas.hpp"
#include "ccanvas/error.hpp"
#include "json.hpp"

namespace ccanvas::protocol {

using nlohmann::json;

inline constexpr std::string_view version = "1";
inline constexpr std::size_t max_frame_bytes = 64u * 1024u * 1024u;
inline constexpr std::chrono::milliseconds default_handshake_timeout{5000};

enum class Op { execute, snapshot, restore, ping, shutdown };

constexpr std::string_view to_string(Op op) noexcept {
  switch (op) {
    case Op::execute: return "execute";
    case Op::snapshot: return "snapshot";
    case Op::restore: return "restore";
    case Op::ping: return "ping";
    case Op::shutdown: return "shutdown";
  }
  return "?";
}

inline std::optional<Op> op_from_string(std::string_view s) {
  for (Op op : {Op::execute, Op::snapshot, Op::restore, Op::ping, Op::shutdown}) {
    if (to_string(op) == s) return op;
  }
  return std::nullopt;
}

struct Request {
  std::uint64_t id = 0;
  Op op = Op::ping;
  json payload = json::object();

  friend bool operator==(const Request&, const Request&) = default;
};

struct Response {
  std::uint64_t id = 0;
  bool ok = true;
  json payload = json::object();

  friend bool operator==(const Response&, const Response&) = default;
};

namespace detail {

[[noreturn]] inline void schema_error(const std::string& what) {
  throw Error(ErrorCode::schema_violation, "invalid frame: " + what);
}

inline json parse_frame(std::string_view bytes) {
  if (bytes.size() > max_frame_bytes) {
    throw Error(ErrorCode::frame_too_large,
                "frame of " + std::to_string(bytes.size()) + " bytes exceeds the 64 MiB limit");
  }
  if (!bytes.empty() && bytes.back() == '\n') bytes.remove_suffix(1);
  try {
    auto j = json::parse(bytes);
    if (!j.is_object()) schema_error("frame must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::malformed_json, std::string("malformed frame: ") + e.what());
  }
}

inline std::uint64_t frame_id(const json& j) {
  auto it = j.find("id");
  if (it == j.end() || !it->is_number_unsigned() || it->get<std::uint64_t>() == 0) {
    schema_error("'id' must be a positive integer");
  }
  return it->get<std::uint64_t>();
}

inline json frame_payload(const json& j) {
  auto it = j.find("payload");
  if (it == j.end() || !it->is_object()) schema_error("'payload' must be an object");
  return *it;
}

inline void check_request_payload(Op op, const json& payload) {
  if (op == Op::execute && !(payload.contains("code") && payload["code"].is_string())) {
    schema_error("execute payload needs string 'code'");
  }
  if (op == Op::restore && !(payload.contains("blob") && payload["blob"].is_string())) {
    schema_error("restore payload needs string 'blob'");
  }
}

}  // namespace detail

inline std::string encode_frame(const Request& r) {
  detail::check_request_payload(r.op, r.payload);
  json j = {{"id", r.id}, {"op", to_string(r.op)}, {"payload", r.payload}};
  return j.dump() + "\n";
}

inline std::string encode_frame(const Response& r) {
  json j = {{"id", r.id}, {"ok", r.ok}, {"payload", r.payload}};
  return j.dump() + "\n";
}

template <typename Message>
Message decode_frame(std::string_view bytes);

template <>
inline Request decode_frame<Request>(std::string_view bytes) {
  auto j = detail::parse_frame(bytes);
  Request r;
  r.id = detail::frame_id(j);
  auto op = j.find("op");
  if (op == j.end() || !op->is_string()) detail::schema_error("'op' must be a string");
  auto parsed = op_from_string(op->get<std::string>());
  if (!parsed) detail::schema_error("unknown op '" + op->get<std::string>() + "'");
  r.op = *parsed;
  r.payload = detail::frame_payload(j);
  detail::check_request_payload(r.op, r.payload);
  return r;
}

template <>
inline Response decode_frame<Response>(std::string_view bytes) {
  auto j = detail::parse_frame(bytes);
  Response r;
  r.id = detail::frame_id(j);
  auto ok = j.find("ok");
  if (ok == j.end() || !ok->is_boolean()) detail::schema_error("'ok' must be a boolean");
  r.ok = ok->get<bool>();
  r.payload = detail::frame_payload(j);
  return r;
}

// Typed views of response payloads.

struct ErrorInfo {
  std::string etype;
  std::string message;
  std::string traceback;
};

struct ExecuteReply {
  std::string stdout_text;
  std::string stderr_text;
  std::optional<std::string> result_repr;
  std::vector<OutputItem> rich;
  std::optional<ErrorInfo> error;
};

struct SnapshotReply {
  std::string blob;
  std::vector<std::string> skipped;
};

inline std::optional<ErrorInfo> error_info(const json& payload) {
  auto it = payload.find("error");
  if (it == payload.end() || it->is_null()) return std::nullopt;
  return ErrorInfo{it->value("etype", std::string{}), it->value("message", std::string{}),
                   it->value("traceback", std::string{})};
}

inline std::vector<std::string> string_list(const json& payload, const char* key) {
  std::vector<std::string> out;
  auto it = payload.find(key);
  if (it == payload.end()) return out;
  if (!it->is_array()) detail::schema_error(std::string("'") + key + "' must be a list");
  for (const auto& v : *it) {
    if (!v.is_string()) detail::schema_error(std::string("'") + key + "' must hold strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

inline ExecuteReply parse_execute_reply(const json& payload) {
  ExecuteReply r;
  r.stdout_text = payload.value("stdout", std::string{});
  r.stderr_text = payload.value("stderr", std::string{});
  if (auto it = payload.find("result_repr"); it != payload.end() && !it->is_null()) {
    if (!it->is_string()) detail::schema_error("'result_repr' must be a string");
    r.result_repr = it->get<std::string>();
  }
  if (auto it = payload.find("rich"); it != payload.end()) {
    if (!it->is_array()) detail::schema_error("'rich' must be a list");
    for (const auto& item : *it) {
      if (!item.is_object() || !item.contains("mime") || !item.contains("data") || !item["mime"].is_string() ||
          !item["data"].is_string()) {
        detail::schema_error("rich items need string 'mime' and 'data'");
      }
      r.rich.push_back({item["mime"].get<std::string>(), item["data"].get<std::string>()});
    }
  }
  r.error = error_info(payload);
  return r;
}

inline SnapshotReply parse_snapshot_reply(const json& payload) {
  auto it = payload.find("blob");
  if (it == payload.end() || !it->is_string()) detail::schema_error("snapshot payload needs string 'blob'");
  return {it->get<std::string>(), string_list(payload, "skipped")};
}

// Transport helpers over a connected stream socket or pipe.

inline void write_all(int fd, std::string_view bytes) {
  while (!bytes.empty()) {
    ssize_t n = ::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == ENOTSOCK) n = ::write(fd, bytes.data(), bytes.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::worker_failure, std::string("write to worker failed: ") + std::strerror(errno));
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
}

/// Buffered LF-delimited reader with an optional deadline per line.
class LineReader {
 public:
  explicit LineReader(int fd, std::size_t max_line = max_frame_bytes + 1) : fd_(fd), max_line_(max_line) {}

  /// nullopt on a clean EOF. Throws timeout / frame_too_large.
  std::optional<std::string> read_line(std::optional<std::chrono::milliseconds> timeout = std::nullopt) {
    const auto deadline = timeout ? std::optional(std::chrono::steady_clock::now() + *timeout) : std::nullopt;
    for (;;) {
      if (auto nl = buffer_.find('\n', scanned_); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl + 1);
        buffer_.erase(0, nl + 1);
        scanned_ = 0;
        return line;
      }
      scanned_ = buffer_.size();
      if (buffer_.size() > max_line_) {
        throw Error(ErrorCode::frame_too_large, "incoming frame exceeds the 64 MiB limit");
      }
      if (eof_) {
        if (buffer_.empty()) return std::nullopt;
        throw Error(ErrorCode::protocol_error, "stream closed in the middle of a frame");
      }
      int wait_ms = -1;
      if (deadline) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) throw Error(ErrorCode::timeout, "timed out waiting for worker output");
        wait_ms = static_cast<int>(left.count());
      }
      pollfd p{fd_, POLLIN, 0};
      int rc = ::poll(&p, 1, wait_ms);
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::worker_failure, std::string("poll failed: ") + std::strerror(errno));
      }
      if (rc == 0) continue;  // deadline re-checked above
      char chunk[65536];
      ssize_t n = ::read(fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        if (errno == ECONNRESET) { eof_ = true; continue; }
        throw Error(ErrorCode::worker_failure, std::string("read failed: ") + std::strerror(errno));
      }
      if (n == 0) eof_ = true;
      else buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_;
  std::size_t max_line_;
  std::string buffer_;
  std::size_t scanned_ = 0;
  bool eof_ = false;
};

/// The worker's first line must be {"ready":"<version>"}.
inline std::string handshake(LineReader& reader, std::chrono::milliseconds timeout = default_handshake_timeout) {
  std::optional<std::string> line;
  try {
    line = reader.read_line(timeout);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::timeout) throw Error(ErrorCode::handshake_timeout, "worker did not report ready in time");
    throw;
  }
  if (!line) throw Error(ErrorCode::protocol_error, "worker exited before the handshake");
  json j;
  try {
    j = json::parse(*line);
  } catch (const json::parse_error&) {
    throw Error(ErrorCode::protocol_error, "garbage handshake line from worker");
  }
  auto ready = j.is_object() ? j.find("ready") : j.end();
  if (!j.is_object() || ready == j.end() || !ready->is_string()) {
    throw Error(ErrorCode::protocol_error, "handshake line lacks a 'ready' version");
  }
  auto v = ready->get<std::string>();
  if (v != version) {
    throw Error(ErrorCode::version_mismatch, "worker speaks protocol version '" + v + "', expected '" + std::string(version) + "'");
  }
  return v;
}

}  // namespace ccanvas::protocol
