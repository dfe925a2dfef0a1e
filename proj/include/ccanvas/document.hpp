#pragma once

// A live canvas: the document value, the lock that serializes every
// mutation to it, and the event stream those mutations publish. Events are
// published while the lock is held, so stream order equals mutation order.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ccanvas/canvas.hpp"
#include "ccanvas/json_codec.hpp"

namespace ccanvas {

namespace event_kind {
inline constexpr const char* cell_created = "cell-created";
inline constexpr const char* cell_moved = "cell-moved";
inline constexpr const char* cell_updated = "cell-updated";
inline constexpr const char* cell_deleted = "cell-deleted";
inline constexpr const char* output_updated = "output-updated";
inline constexpr const char* output_detached = "output-detached";
inline constexpr const char* output_deleted = "output-deleted";
inline constexpr const char* env_created = "env-created";
inline constexpr const char* env_moved = "env-moved";
inline constexpr const char* env_deleted = "env-deleted";
inline constexpr const char* execution_started = "execution-started";
inline constexpr const char* execution_finished = "execution-finished";
inline constexpr const char* session_warning = "session-warning";
}  // namespace event_kind

struct CanvasEvent {
  std::uint64_t seq = 0;
  std::string kind;
  nlohmann::json payload;
};

inline nlohmann::json to_json(const CanvasEvent& e) { return {{"seq", e.seq}, {"kind", e.kind}, {"payload", e.payload}}; }

/// A subscriber's bounded mailbox. When a slow reader lets it overflow the
/// subscription is closed rather than blocking publishers.
class Subscription {
 public:
  static constexpr std::size_t capacity = 1024;

  std::optional<CanvasEvent> pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
    if (queue_.empty()) return std::nullopt;
    auto e = std::move(queue_.front());
    queue_.pop_front();
    return e;
  }

  bool closed() const {
    std::lock_guard lock(mutex_);
    return closed_ && queue_.empty();
  }

  bool overflowed() const {
    std::lock_guard lock(mutex_);
    return overflowed_;
  }

  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  friend class EventLog;

  bool offer(const CanvasEvent& e) {
    bool accepted = true;
    {
      std::lock_guard lock(mutex_);
      if (closed_) return false;
      if (queue_.size() >= capacity) {
        overflowed_ = true;
        closed_ = true;
        queue_.clear();
        accepted = false;
      } else {
        queue_.push_back(e);
      }
    }
    cv_.notify_all();
    return accepted;
  }

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<CanvasEvent> queue_;
  bool closed_ = false;
  bool overflowed_ = false;
};

class EventLog {
 public:
  CanvasEvent publish(std::string kind, nlohmann::json payload) {
    std::lock_guard lock(mutex_);
    CanvasEvent e{++last_seq_, std::move(kind), std::move(payload)};
    for (auto it = subscribers_.begin(); it != subscribers_.end();) {
      if (!(*it)->offer(e)) it = subscribers_.erase(it);
      else ++it;
    }
    if (recorder_) recorder_(e);
    return e;
  }

  std::shared_ptr<Subscription> subscribe() {
    std::lock_guard lock(mutex_);
    auto sub = std::make_shared<Subscription>();
    subscribers_.push_back(sub);
    return sub;
  }

  void close_all() {
    std::lock_guard lock(mutex_);
    for (auto& s : subscribers_) s->close();
    subscribers_.clear();
  }

  std::uint64_t last_seq() const {
    std::lock_guard lock(mutex_);
    return last_seq_;
  }

  /// Synchronous tap on every event; used by tests and logging.
  void set_recorder(std::function<void(const CanvasEvent&)> recorder) {
    std::lock_guard lock(mutex_);
    recorder_ = std::move(recorder);
  }

 private:
  mutable std::mutex mutex_;
  std::uint64_t last_seq_ = 0;
  std::vector<std::shared_ptr<Subscription>> subscribers_;
  std::function<void(const CanvasEvent&)> recorder_;
};

/// Events staged by a mutation; published only if the mutation succeeds.
class EventBatch {
 public:
  void emit(std::string kind, nlohmann::json payload) { staged_.push_back({0, std::move(kind), std::move(payload)}); }

 private:
  friend class Document;
  std::vector<CanvasEvent> staged_;
};

class Document {
 public:
  explicit Document(Canvas canvas) : canvas_(std::move(canvas)), id_(canvas_.id) {}

  const std::string& id() const noexcept { return id_; }

  Canvas snapshot() const {
    std::lock_guard lock(mutex_);
    return canvas_;
  }

  template <typename F>
  auto read(F&& f) const {
    std::lock_guard lock(mutex_);
    return f(static_cast<const Canvas&>(canvas_));
  }

  /// Runs `f(canvas, events)` under the document lock. If `f` throws the
  /// canvas is restored and nothing is published.
  template <typename F>
  auto mutate(F&& f) {
    std::unique_lock lock(mutex_);
    Canvas before = canvas_;
    EventBatch batch;
    try {
      if constexpr (std::is_void_v<decltype(f(canvas_, batch))>) {
        f(canvas_, batch);
        finish(batch, lock);
      } else {
        auto result = f(canvas_, batch);
        finish(batch, lock);
        return result;
      }
    } catch (...) {
      canvas_ = std::move(before);
      throw;
    }
  }

  /// Emits a non-mutating event (execution progress, warnings).
  void notify(std::string kind, nlohmann::json payload) {
    std::lock_guard lock(mutex_);
    events_.publish(std::move(kind), std::move(payload));
  }

  void warn(const std::string& message, nlohmann::json extra = nlohmann::json::object()) {
    extra["message"] = message;
    notify(event_kind::session_warning, std::move(extra));
  }

  EventLog& events() noexcept { return events_; }

  /// Called (outside the lock) after each successful mutation.
  void set_on_change(std::function<void()> hook) {
    std::lock_guard lock(mutex_);
    on_change_ = std::move(hook);
  }

  // Mutations with their events.

  Cell create_cell(std::string source, Rect frame) {
    return mutate([&](Canvas& c, EventBatch& ev) {
      auto cell = ccanvas::create_cell(c, std::move(source), frame);
      ev.emit(event_kind::cell_created, {{"cell", json_codec::to_json(cell)}});
      return cell;
    });
  }

  Cell update_cell(const std::string& id, std::optional<std::string> source, std::optional<Rect> frame) {
    return mutate([&](Canvas& c, EventBatch& ev) {
      const auto before = get_cell(c, id);
      auto cell = ccanvas::update_cell(c, id, std::move(source), frame);
      const bool only_moved = cell.source == before.source && cell.frame.width == before.frame.width &&
                              cell.frame.height == before.frame.height;
      ev.emit(only_moved ? event_kind::cell_moved : event_kind::cell_updated, {{"cell", json_codec::to_json(cell)}});
      return cell;
    });
  }

  /// Returns the ids of the outputs removed with the cell.
  std::vector<std::string> delete_cell(const std::string& id) {
    return mutate([&](Canvas& c, EventBatch& ev) {
      auto removed = ccanvas::delete_cell(c, id);
      ev.emit(event_kind::cell_deleted, {{"cell_id", id}, {"removed_outputs", removed}});
      return removed;
    });
  }

  Environment create_environment(Rect region, std::string color, std::string session_id) {
    return mutate([&](Canvas& c, EventBatch& ev) {
      auto env = ccanvas::create_environment(c, region, std::move(color), std::move(session_id));
      ev.emit(event_kind::env_created, {{"environment", json_codec::to_json(env)}});
      return env;
    });
  }

  MoveEnvironmentResult move_environment(const std::string& id, Delta delta) {
    return mutate([&](Canvas& c, EventBatch& ev) {
      auto moved = ccanvas::move_environment(c, id, delta);
      nlohmann::json cells = nlohmann::json::array(), outputs = nlohmann::json::array();
      for (const auto& cid : moved.moved_cells) cells.push_back(json_codec::to_json(c.cells.at(cid)));
      for (const auto& oid : moved.moved_outputs) outputs.push_back(json_codec::to_json(c.outputs.at(oid)));
      ev.emit(event_kind::env_moved,
              {{"environment", json_codec::to_json(moved.environment)}, {"cells", cells}, {"outputs", outputs}});
      return moved;
    });
  }

  Environment delete_environment(const std::string& id) {
    return mutate([&](Canvas& c, EventBatch& ev) {
      auto env = ccanvas::delete_environment(c, id);
      ev.emit(event_kind::env_deleted, {{"environment_id", id}});
      return env;
    });
  }

  OutputCell detach_output(const std::string& id) {
    return mutate([&](Canvas& c, EventBatch& ev) {
      auto out = ccanvas::detach_output(c, id);
      ev.emit(event_kind::output_detached, {{"output", json_codec::to_json(out)}});
      return out;
    });
  }

  OutputCell move_output(const std::string& id, Point origin) {
    return mutate([&](Canvas& c, EventBatch& ev) {
      auto out = ccanvas::move_output(c, id, origin);
      ev.emit(event_kind::output_updated, {{"output", json_codec::to_json(out)}});
      return out;
    });
  }

  void delete_output(const std::string& id) {
    mutate([&](Canvas& c, EventBatch& ev) {
      ccanvas::delete_output(c, id);
      ev.emit(event_kind::output_deleted, {{"output_id", id}});
    });
  }

  /// Write-back of a finished execution. nullopt if the cell disappeared
  /// while the job was running.
  std::optional<OutputCell> record_execution(const std::string& cell_id, std::int64_t execution_count, Bundle bundle,
                                             ProducedBy produced_by) {
    return mutate([&](Canvas& c, EventBatch& ev) -> std::optional<OutputCell> {
      auto it = c.cells.find(cell_id);
      if (it == c.cells.end()) return std::nullopt;
      it->second.execution_count = execution_count;
      ev.emit(event_kind::cell_updated, {{"cell", json_codec::to_json(it->second)}});
      auto out = attach_or_update_output(c, cell_id, std::move(bundle), std::move(produced_by));
      ev.emit(event_kind::output_updated, {{"output", json_codec::to_json(out)}});
      return out;
    });
  }

  /// Swaps in a whole new document, expressed on the stream as deletions
  /// of everything old followed by creations of everything new.
  void replace(Canvas next) {
    mutate([&](Canvas& c, EventBatch& ev) {
      for (const auto& [id, _] : c.outputs) ev.emit(event_kind::output_deleted, {{"output_id", id}});
      for (const auto& [id, _] : c.cells) {
        ev.emit(event_kind::cell_deleted, {{"cell_id", id}, {"removed_outputs", nlohmann::json::array()}});
      }
      for (const auto& [id, _] : c.environments) ev.emit(event_kind::env_deleted, {{"environment_id", id}});
      next.id = id_;
      c = std::move(next);
      for (const auto& [_, env] : c.environments) {
        ev.emit(event_kind::env_created, {{"environment", json_codec::to_json(env)}});
      }
      for (const auto& [_, cell] : c.cells) ev.emit(event_kind::cell_created, {{"cell", json_codec::to_json(cell)}});
      for (const auto& [_, out] : c.outputs) ev.emit(event_kind::output_updated, {{"output", json_codec::to_json(out)}});
    });
  }

 private:
  void finish(EventBatch& batch, std::unique_lock<std::mutex>& lock) {
    for (auto& e : batch.staged_) events_.publish(std::move(e.kind), std::move(e.payload));
    auto hook = on_change_;
    lock.unlock();
    if (!hook) return;
    try {
      hook();
    } catch (...) {
    }
  }

  mutable std::mutex mutex_;
  Canvas canvas_;
  const std::string id_;
  EventLog events_;
  std::function<void()> on_change_;
};

}  // namespace ccanvas
