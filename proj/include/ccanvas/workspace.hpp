#pragma once

// A directory of .2dntb files, one per canvas, plus the debounced autosave
// that keeps them in step with the live documents.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ccanvas/format_2dntb.hpp"

namespace ccanvas {

inline constexpr std::string_view canvas_extension = ".2dntb";

/// Writes `bytes` to a sibling temp file, fsyncs it and renames it over
/// `path`, so readers see either the old file or the new one.
inline void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid());
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorCode::io_error, "cannot write " + tmp.string() + ": " + std::strerror(errno));
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0 && errno == EINTR) continue;
    if (n < 0) {
      const int err = errno;
      ::close(fd);
      ::unlink(tmp.c_str());
      throw Error(ErrorCode::io_error, "cannot write " + tmp.string() + ": " + std::strerror(err));
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0 || ::close(fd) != 0) {
    const int err = errno;
    ::unlink(tmp.c_str());
    throw Error(ErrorCode::io_error, "cannot flush " + tmp.string() + ": " + std::strerror(err));
  }
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    const int err = errno;
    ::unlink(tmp.c_str());
    throw Error(ErrorCode::io_error, "cannot replace " + path.string() + ": " + std::strerror(err));
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Canvas ids double as file stems, so they are restricted to a portable
/// filename alphabet.
inline bool is_valid_canvas_id(std::string_view id) {
  if (id.empty() || id.size() > 128 || id.front() == '.' || id.front() == '-') return false;
  return std::all_of(id.begin(), id.end(), [](char ch) {
    return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '-' ||
           ch == '_' || ch == '.';
  });
}

inline void require_canvas_id(std::string_view id) {
  if (!is_valid_canvas_id(id)) {
    throw Error(ErrorCode::invalid_argument,
                "invalid canvas id '" + std::string(id) + "' (use letters, digits, '-', '_' and '.')");
  }
}

class Workspace {
 public:
  explicit Workspace(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    if (!std::filesystem::is_directory(root_, ec)) {
      throw Error(ErrorCode::io_error, "workspace '" + root_.string() + "' is not a directory");
    }
  }

  const std::filesystem::path& root() const noexcept { return root_; }

  std::filesystem::path path_for(const std::string& canvas_id) const {
    require_canvas_id(canvas_id);
    return root_ / (canvas_id + std::string(canvas_extension));
  }

  bool exists(const std::string& canvas_id) const {
    std::error_code ec;
    return is_valid_canvas_id(canvas_id) && std::filesystem::is_regular_file(path_for(canvas_id), ec);
  }

  /// Ids of every canvas file in the root, sorted.
  std::vector<std::string> scan() const {
    std::vector<std::string> ids;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(root_, ec)) {
      if (!entry.is_regular_file() || entry.path().extension() != canvas_extension) continue;
      auto stem = entry.path().stem().string();
      if (is_valid_canvas_id(stem)) ids.push_back(std::move(stem));
    }
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  /// An empty file loads as a fresh canvas. The id always follows the file
  /// name, whatever the file itself says.
  Canvas load(const std::string& canvas_id) const {
    auto path = path_for(canvas_id);
    if (!exists(canvas_id)) throw Error(ErrorCode::not_found, "unknown canvas '" + canvas_id + "'");
    auto canvas = parse_2dntb(read_file(path), canvas_id);
    canvas.id = canvas_id;
    return canvas;
  }

  void save(const Canvas& canvas) const { atomic_write(path_for(canvas.id), serialize_2dntb(canvas)); }

  void remove(const std::string& canvas_id) const {
    std::error_code ec;
    std::filesystem::remove(path_for(canvas_id), ec);
    if (ec) throw Error(ErrorCode::io_error, "cannot remove canvas file: " + ec.message());
  }

 private:
  std::filesystem::path root_;
};

/// Trailing-edge debounce: a canvas is saved once it has gone `delay`
/// without being touched. Time is injectable so tests can drive it without
/// sleeping; with `background` a thread drives it off the steady clock.
class Autosaver {
 public:
  using Clock = std::chrono::steady_clock;
  using SaveFn = std::function<void(const std::string& canvas_id)>;

  static constexpr std::chrono::milliseconds default_delay{500};

  explicit Autosaver(SaveFn save, std::chrono::milliseconds delay = default_delay, bool background = true)
      : save_(std::move(save)), delay_(delay) {
    if (background) thread_ = std::thread([this] { loop(); });
  }

  Autosaver(const Autosaver&) = delete;
  Autosaver& operator=(const Autosaver&) = delete;

  ~Autosaver() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
    flush_all();
  }

  void touch(const std::string& canvas_id, Clock::time_point now = Clock::now()) {
    {
      std::lock_guard lock(mutex_);
      due_[canvas_id] = now + delay_;
    }
    cv_.notify_all();
  }

  /// Saves every canvas whose quiet period has elapsed at `now`; returns
  /// their ids.
  std::vector<std::string> flush_due(Clock::time_point now) {
    std::vector<std::string> ready;
    {
      std::lock_guard lock(mutex_);
      for (auto it = due_.begin(); it != due_.end();) {
        if (it->second <= now) {
          ready.push_back(it->first);
          it = due_.erase(it);
        } else {
          ++it;
        }
      }
    }
    for (const auto& id : ready) run(id);
    return ready;
  }

  void flush_all() { flush_due(Clock::time_point::max()); }

  /// Drops a pending save without running it.
  void forget(const std::string& canvas_id) {
    std::lock_guard lock(mutex_);
    due_.erase(canvas_id);
  }

  bool pending(const std::string& canvas_id) const {
    std::lock_guard lock(mutex_);
    return due_.contains(canvas_id);
  }

 private:
  void run(const std::string& id) {
    std::lock_guard lock(save_mutex_);
    try {
      save_(id);
    } catch (...) {
      // The save callback reports its own failures.
    }
  }

  void loop() {
    std::unique_lock lock(mutex_);
    while (!stopping_) {
      if (due_.empty()) {
        cv_.wait(lock);
        continue;
      }
      auto next = std::min_element(due_.begin(), due_.end(),
                                   [](const auto& a, const auto& b) { return a.second < b.second; })
                      ->second;
      if (cv_.wait_until(lock, next) == std::cv_status::timeout) {
        lock.unlock();
        flush_due(Clock::now());
        lock.lock();
      }
    }
  }

  SaveFn save_;
  const std::chrono::milliseconds delay_;
  mutable std::mutex mutex_;
  std::mutex save_mutex_;
  std::condition_variable cv_;
  std::map<std::string, Clock::time_point> due_;
  bool stopping_ = false;
  std::thread thread_;
};

}  // namespace ccanvas
