#pragma once

// One live interpreter worker plus its FIFO of pending jobs. Every job runs
// on the session's own thread, so at most one request is in flight per
// worker and completions never interleave.

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <exception>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ccanvas/process.hpp"
#include "ccanvas/worker_channel.hpp"

namespace ccanvas {

enum class SessionState { starting, idle, busy, dead };

constexpr std::string_view to_string(SessionState s) noexcept {
  switch (s) {
    case SessionState::starting: return "starting";
    case SessionState::idle: return "idle";
    case SessionState::busy: return "busy";
    case SessionState::dead: return "dead";
  }
  return "?";
}

struct WorkerCommand {
  std::vector<std::string> argv;
  std::chrono::milliseconds handshake_timeout = protocol::default_handshake_timeout;
};

/// Splits a command line on whitespace. No quoting.
inline WorkerCommand parse_worker_command(std::string_view line) {
  WorkerCommand cmd;
  std::string word;
  for (char ch : line) {
    if (ch == ' ' || ch == '\t' || ch == '\n') {
      if (!word.empty()) cmd.argv.push_back(std::move(word));
      word.clear();
    } else {
      word += ch;
    }
  }
  if (!word.empty()) cmd.argv.push_back(std::move(word));
  if (cmd.argv.empty()) throw Error(ErrorCode::invalid_argument, "empty worker command");
  return cmd;
}

#ifndef CCANVAS_DEFAULT_WORKER
#define CCANVAS_DEFAULT_WORKER "python3 ccanvas_worker.py"
#endif

/// $CCANVAS_WORKER if set, else the command baked in at build time.
inline WorkerCommand default_worker_command() {
  if (const char* env = std::getenv("CCANVAS_WORKER"); env && *env) return parse_worker_command(env);
  return parse_worker_command(CCANVAS_DEFAULT_WORKER);
}

struct SessionHandle {
  std::string session_id;
  std::string canvas_id;
  std::optional<std::string> parent_session_id;  // absent only for the main session
  std::int64_t exec_counter = 1;                  // count the next execution will get
  SessionState state = SessionState::starting;
  pid_t pid = -1;
};

struct ExecOutcome {
  protocol::ExecuteReply reply;
  bool ok = true;
  std::int64_t execution_count = 0;
  double duration_ms = 0.0;
};

inline std::exception_ptr terminated_error(const std::string& session_id) {
  return std::make_exception_ptr(
      Error(ErrorCode::environment_terminated, "environment terminated (session '" + session_id + "')"));
}

class Session : public std::enable_shared_from_this<Session> {
 public:
  using ExecCallback = std::function<void(std::exception_ptr, const ExecOutcome*)>;

  /// Spawns the worker and completes the handshake; throws spawn_failed and
  /// leaves nothing running on failure.
  static std::shared_ptr<Session> start(std::string session_id, std::string canvas_id,
                                        std::optional<std::string> parent, const WorkerCommand& command) {
    auto session = std::shared_ptr<Session>(new Session(std::move(session_id), std::move(canvas_id), std::move(parent)));
    try {
      session->process_ = ChildProcess::spawn(command.argv);
      session->channel_ = std::make_unique<WorkerChannel>(session->process_.channel());
      session->channel_->handshake(command.handshake_timeout);
    } catch (const Error& e) {
      session->process_.kill();
      throw Error(ErrorCode::spawn_failed, "worker for session '" + session->id_ + "' failed to start: " + e.what());
    }
    session->state_ = SessionState::idle;
    session->process_pid_ = session->process_.pid();
    session->thread_ = std::thread([raw = session.get()] { raw->run(); });
    return session;
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  ~Session() { terminate(std::chrono::milliseconds(2000)); }

  const std::string& id() const noexcept { return id_; }

  SessionHandle handle() const {
    std::lock_guard lock(mutex_);
    return {id_, canvas_id_, parent_, counter_ + 1, state_, process_pid_};
  }

  SessionState state() const {
    std::lock_guard lock(mutex_);
    return state_;
  }

  std::size_t queued() const {
    std::lock_guard lock(mutex_);
    return queue_.size();
  }

  /// `done` runs on the session thread, after the worker replied or when
  /// the job is abandoned.
  void submit_execute(std::string code, ExecCallback done) {
    auto shared_done = std::make_shared<ExecCallback>(std::move(done));
    enqueue(Job{
        [this, code = std::move(code), shared_done] {
          std::int64_t count;
          {
            std::lock_guard lock(mutex_);
            count = ++counter_;
          }
          const auto started = std::chrono::steady_clock::now();
          auto resp = channel_->call(protocol::Op::execute, {{"code", code}});
          ExecOutcome outcome;
          outcome.reply = protocol::parse_execute_reply(resp.payload);
          outcome.ok = resp.ok && !outcome.reply.error;
          outcome.execution_count = count;
          outcome.duration_ms =
              std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
          try {
            (*shared_done)(nullptr, &outcome);
          } catch (...) {
          }
        },
        [shared_done](std::exception_ptr e) { (*shared_done)(e, nullptr); }});
  }

  std::future<ExecOutcome> submit_execute(std::string code) {
    auto promise = std::make_shared<std::promise<ExecOutcome>>();
    auto future = promise->get_future();
    submit_execute(std::move(code), [promise](std::exception_ptr e, const ExecOutcome* o) {
      if (e) promise->set_exception(e);
      else promise->set_value(*o);
    });
    return future;
  }

  std::future<protocol::SnapshotReply> submit_snapshot() {
    auto promise = std::make_shared<std::promise<protocol::SnapshotReply>>();
    auto future = promise->get_future();
    enqueue(Job{[this, promise] {
                  auto resp = channel_->call(protocol::Op::snapshot);
                  if (!resp.ok) {
                    auto info = protocol::error_info(resp.payload);
                    throw Error(ErrorCode::fork_failed, "snapshot failed: " + (info ? info->message : std::string("unknown")));
                  }
                  promise->set_value(protocol::parse_snapshot_reply(resp.payload));
                },
                [promise](std::exception_ptr e) { promise->set_exception(e); }});
    return future;
  }

  /// Resolves to the names that could not be restored.
  std::future<std::vector<std::string>> submit_restore(std::string blob) {
    auto promise = std::make_shared<std::promise<std::vector<std::string>>>();
    auto future = promise->get_future();
    enqueue(Job{[this, promise, blob = std::move(blob)] {
                  auto resp = channel_->call(protocol::Op::restore, {{"blob", blob}});
                  if (!resp.ok) {
                    auto info = protocol::error_info(resp.payload);
                    throw Error(ErrorCode::fork_failed, "restore failed: " + (info ? info->message : std::string("unknown")));
                  }
                  promise->set_value(protocol::string_list(resp.payload, "skipped"));
                },
                [promise](std::exception_ptr e) { promise->set_exception(e); }});
    return future;
  }

  /// Idempotent. Fails queued jobs, asks the worker to exit and kills it
  /// after the grace period.
  void terminate(std::chrono::milliseconds grace = std::chrono::milliseconds(5000)) {
    std::deque<Job> pending;
    {
      std::lock_guard lock(mutex_);
      if (terminated_) return;
      terminated_ = true;
      state_ = SessionState::dead;
      pending.swap(queue_);
    }
    cv_.notify_all();
    for (auto& job : pending) job.fail(terminated_error(id_));
    {
      std::lock_guard lock(process_mutex_);
      if (channel_) {
        try {
          channel_->send(protocol::Op::shutdown);
        } catch (const Error&) {
        }
      }
      if (!process_.wait_for_exit(grace)) process_.kill();
    }
    if (thread_.joinable()) {
      if (thread_.get_id() == std::this_thread::get_id()) thread_.detach();
      else thread_.join();
    }
  }

  /// SIGKILL without the shutdown handshake, as if the worker crashed.
  void kill_worker() {
    std::lock_guard lock(process_mutex_);
    if (process_.pid() > 0) ::kill(process_.pid(), SIGKILL);
  }

 private:
  struct Job {
    std::function<void()> run;
    std::function<void(std::exception_ptr)> fail;
  };

  Session(std::string id, std::string canvas_id, std::optional<std::string> parent)
      : id_(std::move(id)), canvas_id_(std::move(canvas_id)), parent_(std::move(parent)) {}

  void enqueue(Job job) {
    {
      std::lock_guard lock(mutex_);
      if (state_ != SessionState::dead) {
        queue_.push_back(std::move(job));
        cv_.notify_all();
        return;
      }
    }
    job.fail(terminated_error(id_));
  }

  void run() {
    for (;;) {
      Job job;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return !queue_.empty() || state_ == SessionState::dead; });
        if (queue_.empty()) return;
        job = std::move(queue_.front());
        queue_.pop_front();
        state_ = SessionState::busy;
      }
      try {
        job.run();
        std::lock_guard lock(mutex_);
        if (state_ == SessionState::busy) state_ = SessionState::idle;
      } catch (const Error& e) {
        const bool transport = e.code() == ErrorCode::worker_failure || e.code() == ErrorCode::protocol_error ||
                               e.code() == ErrorCode::malformed_json || e.code() == ErrorCode::schema_violation ||
                               e.code() == ErrorCode::frame_too_large;
        if (transport) {
          // The worker is gone or speaking garbage: the session is over.
          std::deque<Job> pending;
          bool was_terminated;
          {
            std::lock_guard lock(mutex_);
            was_terminated = terminated_;
            state_ = SessionState::dead;
            pending.swap(queue_);
          }
          job.fail(was_terminated ? terminated_error(id_)
                                  : std::make_exception_ptr(Error(ErrorCode::environment_terminated,
                                                                  "environment terminated: worker for session '" +
                                                                      id_ + "' died (" + e.what() + ")")));
          for (auto& p : pending) p.fail(terminated_error(id_));
          return;
        }
        job.fail(std::current_exception());
        std::lock_guard lock(mutex_);
        if (state_ == SessionState::busy) state_ = SessionState::idle;
      } catch (...) {
        job.fail(std::current_exception());
        std::lock_guard lock(mutex_);
        if (state_ == SessionState::busy) state_ = SessionState::idle;
      }
    }
  }

  const std::string id_;
  const std::string canvas_id_;
  const std::optional<std::string> parent_;

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Job> queue_;
  SessionState state_ = SessionState::starting;
  std::int64_t counter_ = 0;
  bool terminated_ = false;
  pid_t process_pid_ = -1;

  std::mutex process_mutex_;
  ChildProcess process_;
  std::unique_ptr<WorkerChannel> channel_;
  std::thread thread_;
};

}  // namespace ccanvas
