#pragma once

// Owns the runtime sessions of every registered canvas.
//
// Each canvas gets a lazily started "main" session. Environments own forked
// sessions ("fork-N"), created by snapshotting main between executions and
// restoring into a fresh worker; after that the two never share state. Cell
// executions are routed geometrically at dispatch time and their results
// are written back through the canvas document.

#include <algorithm>
#include <chrono>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "ccanvas/document.hpp"
#include "ccanvas/session.hpp"

namespace ccanvas {

inline constexpr std::string_view main_session_id = "main";

struct OrchestratorOptions {
  WorkerCommand worker;
  std::chrono::milliseconds terminate_grace{5000};
};

struct ExecutionResult {
  std::string status;  // "ok" or "error"
  Bundle bundle;
  std::int64_t execution_count = 0;
  double duration_ms = 0.0;
  std::string session_id;
  std::string cell_id;
  std::optional<std::string> output_id;
};

struct ForkResult {
  SessionHandle session;
  std::vector<std::string> warnings;  // names the child could not inherit
};

struct EnvironmentCreated {
  Environment environment;
  std::vector<std::string> warnings;
};

/// Turns a worker reply into the output bundle shown on the canvas:
/// stdout, stderr, result, rich items, then the error as stderr text.
inline Bundle make_bundle(const protocol::ExecuteReply& reply) {
  Bundle bundle;
  if (!reply.stdout_text.empty()) bundle.push_back({std::string(mime::stream_stdout), reply.stdout_text});
  if (!reply.stderr_text.empty()) bundle.push_back({std::string(mime::stream_stderr), reply.stderr_text});
  if (reply.result_repr) bundle.push_back({std::string(mime::text_plain), *reply.result_repr});
  for (auto item : reply.rich) {
    if (item.mime == mime::application_json && nlohmann::json::accept(item.data)) {
      item.data = nlohmann::json::parse(item.data).dump();
    }
    if (auto why = check_output_item(item); !why.empty()) {
      bundle.push_back({std::string(mime::stream_stderr), "canvas_display: " + why + "\n"});
    } else {
      bundle.push_back(std::move(item));
    }
  }
  if (reply.error) {
    auto text = reply.error->traceback.empty() ? reply.error->etype + ": " + reply.error->message
                                               : reply.error->traceback;
    if (text.empty() || text.back() != '\n') text += '\n';
    bundle.push_back({std::string(mime::stream_stderr), text});
  }
  return bundle;
}

inline nlohmann::json to_json(const ExecutionResult& r) {
  return {{"status", r.status},
          {"bundle", json_codec::to_json(r.bundle)},
          {"execution_count", r.execution_count},
          {"duration_ms", r.duration_ms},
          {"session_id", r.session_id},
          {"cell_id", r.cell_id},
          {"output_id", r.output_id ? nlohmann::json(*r.output_id) : nlohmann::json(nullptr)}};
}

inline nlohmann::json to_json(const SessionHandle& h) {
  return {{"session_id", h.session_id},
          {"canvas_id", h.canvas_id},
          {"parent_session_id", h.parent_session_id ? nlohmann::json(*h.parent_session_id) : nlohmann::json(nullptr)},
          {"exec_counter", h.exec_counter},
          {"state", to_string(h.state)}};
}

class Orchestrator {
 public:
  explicit Orchestrator(OrchestratorOptions options) : options_(std::move(options)) {}

  Orchestrator(const Orchestrator&) = delete;
  Orchestrator& operator=(const Orchestrator&) = delete;

  ~Orchestrator() {
    std::vector<std::string> ids;
    {
      std::lock_guard lock(mutex_);
      for (const auto& [id, _] : canvases_) ids.push_back(id);
    }
    for (const auto& id : ids) shutdown_canvas(id);
  }

  void register_canvas(std::shared_ptr<Document> doc) {
    std::lock_guard lock(mutex_);
    auto& rt = canvases_[doc->id()];
    if (!rt) rt = std::make_shared<Runtime>();
    rt->doc = std::move(doc);
  }

  bool has_canvas(const std::string& canvas_id) const {
    std::lock_guard lock(mutex_);
    return canvases_.contains(canvas_id);
  }

  /// Idempotent. The first call spawns the worker.
  SessionHandle ensure_main_session(const std::string& canvas_id) {
    auto rt = runtime(canvas_id);
    return main_session(*rt, canvas_id)->handle();
  }

  /// Forks MAIN (started on demand). Forking from any other session is
  /// rejected.
  ForkResult fork_session(const std::string& canvas_id,
                          std::optional<std::string> source = std::nullopt) {
    if (source && *source != main_session_id) {
      throw Error(ErrorCode::invalid_argument, "sessions can only be forked from the main session, not '" + *source + "'");
    }
    auto rt = runtime(canvas_id);
    std::lock_guard fork_lock(rt->fork_mutex);
    auto [session, warnings] = fork_locked(*rt, canvas_id, next_fork_id(*rt));
    return {session->handle(), std::move(warnings)};
  }

  /// Forks a session, then records the region that owns it. If either step
  /// fails nothing is left behind.
  EnvironmentCreated create_environment(const std::string& canvas_id, Rect region, std::string color) {
    require_valid(region, "environment region");
    if (!is_valid_color(color)) throw Error(ErrorCode::invalid_argument, "invalid color '" + color + "'");
    auto rt = runtime(canvas_id);
    std::shared_ptr<Session> session;
    std::vector<std::string> warnings;
    {
      std::lock_guard fork_lock(rt->fork_mutex);
      std::tie(session, warnings) = fork_locked(*rt, canvas_id, next_fork_id(*rt));
    }
    try {
      auto env = rt->doc->create_environment(region, std::move(color), session->id());
      if (!warnings.empty()) {
        rt->doc->warn("some variables could not be copied into the new environment",
                      {{"environment_id", env.id}, {"session_id", session->id()}, {"skipped", warnings}});
      }
      return {std::move(env), std::move(warnings)};
    } catch (...) {
      {
        std::lock_guard lock(rt->mutex);
        rt->sessions.erase(session->id());
      }
      session->terminate(options_.terminate_grace);
      throw;
    }
  }

  /// Removes the region and terminates the session it owned.
  void delete_environment(const std::string& canvas_id, const std::string& env_id) {
    auto rt = runtime(canvas_id);
    auto env = rt->doc->delete_environment(env_id);
    terminate_session(canvas_id, env.session_id);
  }

  /// Routes by the cell's position now, enqueues on the target session's
  /// FIFO and resolves when the result has been written back.
  std::future<ExecutionResult> submit_cell(const std::string& canvas_id, const std::string& cell_id) {
    auto rt = runtime(canvas_id);
    struct Dispatch {
      std::string source;
      std::optional<std::string> env_session;
    };
    auto dispatch = rt->doc->read([&](const Canvas& c) {
      const auto& cell = get_cell(c, cell_id);
      if (!cell.is_code()) throw Error(ErrorCode::not_executable, "cell '" + cell_id + "' is not a code cell");
      Dispatch d{cell.source, std::nullopt};
      if (auto env = resolve_environment(c, cell_id)) d.env_session = c.environments.at(*env).session_id;
      return d;
    });

    auto busy = [&] {
      if (rt->in_flight.contains(cell_id)) {
        throw Error(ErrorCode::conflict, "cell '" + cell_id + "' already has a queued execution");
      }
    };
    {
      std::lock_guard lock(rt->mutex);
      busy();
    }
    auto session = dispatch.env_session ? env_session(*rt, canvas_id, *dispatch.env_session)
                                        : main_session(*rt, canvas_id);
    {
      std::lock_guard lock(rt->mutex);
      busy();
      if (session->state() == SessionState::dead) {
        throw Error(ErrorCode::environment_terminated, "environment terminated (session '" + session->id() + "')");
      }
      rt->in_flight.insert(cell_id);
    }

    const auto session_id = session->id();
    rt->doc->notify(event_kind::execution_started, {{"cell_id", cell_id}, {"session_id", session_id}});

    auto promise = std::make_shared<std::promise<ExecutionResult>>();
    auto future = promise->get_future();
    session->submit_execute(dispatch.source, [rt, promise, cell_id, session_id](std::exception_ptr err,
                                                                                const ExecOutcome* outcome) {
      {
        std::lock_guard lock(rt->mutex);
        rt->in_flight.erase(cell_id);
      }
      if (err) {
        std::string message = "execution failed";
        try {
          std::rethrow_exception(err);
        } catch (const std::exception& e) {
          message = e.what();
        }
        rt->doc->notify(event_kind::execution_finished,
                        {{"cell_id", cell_id}, {"session_id", session_id}, {"status", "failed"}, {"message", message}});
        promise->set_exception(err);
        return;
      }
      ExecutionResult result;
      result.status = outcome->ok ? "ok" : "error";
      result.bundle = make_bundle(outcome->reply);
      result.execution_count = outcome->execution_count;
      result.duration_ms = outcome->duration_ms;
      result.session_id = session_id;
      result.cell_id = cell_id;
      try {
        if (auto out = rt->doc->record_execution(cell_id, result.execution_count, result.bundle,
                                                 ProducedBy{session_id, result.execution_count})) {
          result.output_id = out->id;
        }
      } catch (const std::exception& e) {
        rt->doc->warn(std::string("could not record execution result: ") + e.what(), {{"cell_id", cell_id}});
      }
      rt->doc->notify(event_kind::execution_finished, {{"cell_id", cell_id},
                                                       {"session_id", session_id},
                                                       {"status", result.status},
                                                       {"execution_count", result.execution_count},
                                                       {"output_id", result.output_id ? nlohmann::json(*result.output_id)
                                                                                      : nlohmann::json(nullptr)}});
      promise->set_value(std::move(result));
    });
    return future;
  }

  ExecutionResult execute_cell(const std::string& canvas_id, const std::string& cell_id) {
    return submit_cell(canvas_id, cell_id).get();
  }

  /// Idempotent; unknown ids are ignored.
  void terminate_session(const std::string& canvas_id, const std::string& session_id) {
    std::shared_ptr<Runtime> rt;
    {
      std::lock_guard lock(mutex_);
      auto it = canvases_.find(canvas_id);
      if (it == canvases_.end()) return;
      rt = it->second;
    }
    std::shared_ptr<Session> session;
    {
      std::lock_guard lock(rt->mutex);
      rt->terminated.insert(session_id);
      auto it = rt->sessions.find(session_id);
      if (it == rt->sessions.end()) return;
      session = it->second;
    }
    session->terminate(options_.terminate_grace);
  }

  /// Terminates every session of one canvas and forgets the canvas.
  void shutdown_canvas(const std::string& canvas_id) {
    std::shared_ptr<Runtime> rt;
    {
      std::lock_guard lock(mutex_);
      auto it = canvases_.find(canvas_id);
      if (it == canvases_.end()) return;
      rt = it->second;
      canvases_.erase(it);
    }
    std::vector<std::shared_ptr<Session>> sessions;
    {
      std::lock_guard lock(rt->mutex);
      for (auto& [id, s] : rt->sessions) sessions.push_back(s);
      rt->sessions.clear();
    }
    std::vector<std::thread> stoppers;
    for (auto& s : sessions) {
      stoppers.emplace_back([s, grace = options_.terminate_grace] { s->terminate(grace); });
    }
    for (auto& t : stoppers) t.join();
  }

  std::optional<SessionHandle> session(const std::string& canvas_id, const std::string& session_id) const {
    auto rt = runtime(canvas_id);
    std::lock_guard lock(rt->mutex);
    auto it = rt->sessions.find(session_id);
    if (it == rt->sessions.end()) return std::nullopt;
    return it->second->handle();
  }

  std::vector<SessionHandle> sessions(const std::string& canvas_id) const {
    auto rt = runtime(canvas_id);
    std::lock_guard lock(rt->mutex);
    std::vector<SessionHandle> out;
    for (const auto& [_, s] : rt->sessions) out.push_back(s->handle());
    return out;
  }

  /// Simulates a crash of one worker process.
  void kill_worker(const std::string& canvas_id, const std::string& session_id) {
    auto rt = runtime(canvas_id);
    std::lock_guard lock(rt->mutex);
    auto it = rt->sessions.find(session_id);
    if (it == rt->sessions.end()) throw Error(ErrorCode::not_found, "unknown session '" + session_id + "'");
    it->second->kill_worker();
  }

  const OrchestratorOptions& options() const noexcept { return options_; }

 private:
  // Lock order: fork_mutex, then mutex. Neither is held while waiting on
  // a session queue except fork_mutex, which no completion callback takes.
  struct Runtime {
    std::mutex mutex;       // the maps below
    std::mutex fork_mutex;  // serializes session creation
    std::shared_ptr<Document> doc;
    std::map<std::string, std::shared_ptr<Session>> sessions;
    std::set<std::string> terminated;
    std::set<std::string> in_flight;
  };

  std::shared_ptr<Runtime> runtime(const std::string& canvas_id) const {
    std::lock_guard lock(mutex_);
    auto it = canvases_.find(canvas_id);
    if (it == canvases_.end()) throw Error(ErrorCode::not_found, "unknown canvas '" + canvas_id + "'");
    return it->second;
  }

  /// nullptr if the session was never started; throws if it was terminated.
  static std::shared_ptr<Session> find_live(Runtime& rt, const std::string& session_id) {
    std::lock_guard lock(rt.mutex);
    if (auto it = rt.sessions.find(session_id); it != rt.sessions.end()) return it->second;
    if (rt.terminated.contains(session_id)) {
      throw Error(ErrorCode::environment_terminated, "environment terminated (session '" + session_id + "')");
    }
    return nullptr;
  }

  std::shared_ptr<Session> main_session(Runtime& rt, const std::string& canvas_id) {
    if (auto s = find_live(rt, std::string(main_session_id))) return s;
    std::lock_guard fork_lock(rt.fork_mutex);
    return main_locked(rt, canvas_id);
  }

  /// Requires fork_mutex.
  std::shared_ptr<Session> main_locked(Runtime& rt, const std::string& canvas_id) {
    const std::string id(main_session_id);
    if (auto s = find_live(rt, id)) return s;
    auto session = Session::start(id, canvas_id, std::nullopt, options_.worker);
    std::lock_guard lock(rt.mutex);
    rt.sessions.emplace(id, session);
    return session;
  }

  /// fork-N with N above every suffix in use by live, dead or recorded
  /// sessions.
  std::string next_fork_id(Runtime& rt) const {
    std::uint64_t top = 0;
    auto consider = [&](const std::string& id) {
      if (id.rfind("fork-", 0) != 0) return;
      try {
        top = std::max<std::uint64_t>(top, std::stoull(id.substr(5)));
      } catch (...) {
      }
    };
    auto recorded = rt.doc->read([&](const Canvas& c) {
      std::vector<std::string> ids;
      for (const auto& [_, env] : c.environments) ids.push_back(env.session_id);
      return ids;
    });
    for (const auto& id : recorded) consider(id);
    std::lock_guard lock(rt.mutex);
    for (const auto& [id, _] : rt.sessions) consider(id);
    for (const auto& id : rt.terminated) consider(id);
    return "fork-" + std::to_string(top + 1);
  }

  /// Requires fork_mutex.
  std::pair<std::shared_ptr<Session>, std::vector<std::string>> fork_locked(Runtime& rt, const std::string& canvas_id,
                                                                            const std::string& child_id) {
    auto main = main_locked(rt, canvas_id);
    // The snapshot waits its turn behind main's queued executions, so the
    // fork point falls between two executions.
    auto snapshot = main->submit_snapshot();
    std::shared_ptr<Session> child;
    try {
      child = Session::start(child_id, canvas_id, std::string(main_session_id), options_.worker);
      auto snap = snapshot.get();
      auto restore_skipped = child->submit_restore(snap.blob).get();
      std::vector<std::string> warnings = snap.skipped;
      for (auto& name : restore_skipped) {
        if (std::find(warnings.begin(), warnings.end(), name) == warnings.end()) warnings.push_back(name);
      }
      std::lock_guard lock(rt.mutex);
      rt.sessions.emplace(child_id, child);
      return {child, warnings};
    } catch (const Error& e) {
      if (child) child->terminate(options_.terminate_grace);
      if (snapshot.valid()) {
        try {
          snapshot.wait();
        } catch (...) {
        }
      }
      if (e.code() == ErrorCode::fork_failed) throw;
      throw Error(ErrorCode::fork_failed, std::string("fork failed: ") + e.what());
    }
  }

  /// Environments loaded from disk name sessions that do not exist in this
  /// process yet; those are forked from main on first use.
  std::shared_ptr<Session> env_session(Runtime& rt, const std::string& canvas_id, const std::string& session_id) {
    if (auto s = find_live(rt, session_id)) return s;
    std::lock_guard fork_lock(rt.fork_mutex);
    if (auto s = find_live(rt, session_id)) return s;
    auto [session, warnings] = fork_locked(rt, canvas_id, session_id);
    if (!warnings.empty()) {
      rt.doc->warn("some variables could not be copied into the environment",
                   {{"session_id", session_id}, {"skipped", warnings}});
    }
    return session;
  }

  OrchestratorOptions options_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Runtime>> canvases_;
};

}  // namespace ccanvas
