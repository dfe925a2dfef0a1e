#pragma once

#include <chrono>
#include <deque>
#include <mutex>
#include <optional>

#include "ccanvas/protocol.hpp"

namespace ccanvas {

/// Client end of one worker connection. Request ids are allocated in
/// increasing order; responses must come back one per request, in request
/// order. Writes are serialized internally; there must be a single reader.
class WorkerChannel {
 public:
  explicit WorkerChannel(int fd) : fd_(fd), reader_(fd) {}

  std::string handshake(std::chrono::milliseconds timeout = protocol::default_handshake_timeout) {
    return protocol::handshake(reader_, timeout);
  }

  std::uint64_t send(protocol::Op op, nlohmann::json payload = nlohmann::json::object()) {
    std::lock_guard lock(write_mutex_);
    protocol::Request req{next_id_, op, std::move(payload)};
    auto frame = protocol::encode_frame(req);
    protocol::write_all(fd_, frame);
    outstanding_.push_back(next_id_);
    return next_id_++;
  }

  protocol::Response receive(std::optional<std::chrono::milliseconds> timeout = std::nullopt) {
    auto line = reader_.read_line(timeout);
    if (!line) throw Error(ErrorCode::worker_failure, "worker closed the connection");
    auto resp = protocol::decode_frame<protocol::Response>(*line);
    std::lock_guard lock(write_mutex_);
    if (outstanding_.empty()) {
      throw Error(ErrorCode::protocol_error, "unsolicited response id " + std::to_string(resp.id));
    }
    if (resp.id != outstanding_.front()) {
      throw Error(ErrorCode::protocol_error, "response id " + std::to_string(resp.id) + " does not match request id " +
                                                 std::to_string(outstanding_.front()));
    }
    outstanding_.pop_front();
    return resp;
  }

  protocol::Response call(protocol::Op op, nlohmann::json payload = nlohmann::json::object(),
                          std::optional<std::chrono::milliseconds> timeout = std::nullopt) {
    send(op, std::move(payload));
    return receive(timeout);
  }

  std::size_t outstanding() const {
    std::lock_guard lock(write_mutex_);
    return outstanding_.size();
  }

 private:
  int fd_;
  protocol::LineReader reader_;
  mutable std::mutex write_mutex_;
  std::uint64_t next_id_ = 1;
  std::deque<std::uint64_t> outstanding_;
};

}  // namespace ccanvas
