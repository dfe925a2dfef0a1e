#pragma once

// The canvas service: every live canvas of a workspace, its runtime, its
// autosave and the agent entry point, behind one transport-neutral API.
// The HTTP layer is a thin adapter over this class.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ccanvas/agent.hpp"
#include "ccanvas/format_ipynb.hpp"
#include "ccanvas/orchestrator.hpp"
#include "ccanvas/workspace.hpp"

namespace ccanvas {

struct ServiceOptions {
  std::filesystem::path workspace;
  WorkerCommand worker = default_worker_command();
  std::chrono::milliseconds execute_timeout{120000};
  std::chrono::milliseconds autosave_delay = Autosaver::default_delay;
  std::chrono::milliseconds terminate_grace{5000};
};

struct CanvasSummary {
  std::string id;
  std::string title;
  bool loaded = false;
};

inline nlohmann::json to_json(const CanvasSummary& s) {
  return {{"id", s.id}, {"title", s.title}, {"loaded", s.loaded}};
}

class Service {
 public:
  explicit Service(ServiceOptions options)
      : options_(std::move(options)),
        workspace_(options_.workspace),
        orchestrator_(OrchestratorOptions{options_.worker, options_.terminate_grace}),
        autosaver_(std::make_unique<Autosaver>([this](const std::string& id) { save_now(id); },
                                               options_.autosave_delay)) {}

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  ~Service() {
    autosaver_.reset();  // flushes pending saves while the documents still exist
    close_streams();
  }

  const ServiceOptions& options() const noexcept { return options_; }
  Workspace& workspace() noexcept { return workspace_; }
  Orchestrator& orchestrator() noexcept { return orchestrator_; }

  // Canvases

  Canvas create_canvas(std::optional<std::string> id = std::nullopt, std::string title = {}) {
    std::lock_guard lock(mutex_);
    auto canvas_id = claim_id(id);
    auto canvas = make_canvas(canvas_id, std::move(title));
    workspace_.save(canvas);
    open_locked(canvas);
    return canvas;
  }

  /// Loaded canvases and unopened files in the workspace, sorted by id.
  std::vector<CanvasSummary> list_canvases() {
    std::map<std::string, CanvasSummary> all;
    for (const auto& id : workspace_.scan()) {
      std::string title;
      try {
        title = workspace_.load(id).title;
      } catch (const Error&) {
        // Listed anyway; opening it reports the problem.
      }
      all[id] = {id, std::move(title), false};
    }
    std::vector<std::shared_ptr<Document>> loaded;
    {
      std::lock_guard lock(mutex_);
      for (const auto& [_, doc] : docs_) loaded.push_back(doc);
    }
    for (const auto& doc : loaded) {
      all[doc->id()] = {doc->id(), doc->read([](const Canvas& c) { return c.title; }), true};
    }
    std::vector<CanvasSummary> out;
    for (auto& [_, s] : all) out.push_back(std::move(s));
    return out;
  }

  /// Opens the canvas from its file on first access.
  std::shared_ptr<Document> document(const std::string& canvas_id) {
    std::lock_guard lock(mutex_);
    if (auto it = docs_.find(canvas_id); it != docs_.end()) return it->second;
    if (!workspace_.exists(canvas_id)) throw Error(ErrorCode::not_found, "unknown canvas '" + canvas_id + "'");
    return open_locked(workspace_.load(canvas_id));
  }

  Canvas canvas(const std::string& canvas_id) { return document(canvas_id)->snapshot(); }

  /// Stops the canvas' sessions and removes it from the workspace.
  void delete_canvas(const std::string& canvas_id) {
    document(canvas_id);
    std::shared_ptr<Document> doc;
    {
      std::lock_guard lock(mutex_);
      auto it = docs_.find(canvas_id);
      if (it == docs_.end()) throw Error(ErrorCode::not_found, "unknown canvas '" + canvas_id + "'");
      doc = it->second;
      docs_.erase(it);
    }
    autosaver_->forget(canvas_id);
    orchestrator_.shutdown_canvas(canvas_id);
    doc->events().close_all();
    workspace_.remove(canvas_id);
  }

  // Cells

  Cell create_cell(const std::string& canvas_id, std::string source, Rect frame) {
    return document(canvas_id)->create_cell(std::move(source), frame);
  }

  Cell update_cell(const std::string& canvas_id, const std::string& cell_id, std::optional<std::string> source,
                   std::optional<Rect> frame) {
    return document(canvas_id)->update_cell(cell_id, std::move(source), frame);
  }

  std::vector<std::string> delete_cell(const std::string& canvas_id, const std::string& cell_id) {
    return document(canvas_id)->delete_cell(cell_id);
  }

  /// Blocks until the result is written back. On timeout the job keeps
  /// running and the cell stays busy until it completes.
  ExecutionResult execute(const std::string& canvas_id, const std::string& cell_id) {
    document(canvas_id);
    auto future = orchestrator_.submit_cell(canvas_id, cell_id);
    if (future.wait_for(options_.execute_timeout) == std::future_status::timeout) {
      throw Error(ErrorCode::timeout, "execution of cell '" + cell_id + "' did not finish within " +
                                          std::to_string(options_.execute_timeout.count()) + " ms");
    }
    return future.get();
  }

  // Environments

  EnvironmentCreated create_environment(const std::string& canvas_id, Rect region, std::string color) {
    document(canvas_id);
    return orchestrator_.create_environment(canvas_id, region, std::move(color));
  }

  MoveEnvironmentResult move_environment(const std::string& canvas_id, const std::string& env_id, Delta delta) {
    return document(canvas_id)->move_environment(env_id, delta);
  }

  Environment delete_environment(const std::string& canvas_id, const std::string& env_id) {
    auto env = document(canvas_id)->read([&](const Canvas& c) { return get_environment(c, env_id); });
    orchestrator_.delete_environment(canvas_id, env_id);
    return env;
  }

  // Outputs

  OutputCell detach_output(const std::string& canvas_id, const std::string& output_id) {
    return document(canvas_id)->detach_output(output_id);
  }

  OutputCell move_output(const std::string& canvas_id, const std::string& output_id, Point origin) {
    return document(canvas_id)->move_output(output_id, origin);
  }

  void delete_output(const std::string& canvas_id, const std::string& output_id) {
    document(canvas_id)->delete_output(output_id);
  }

  // Files

  std::string file_bytes(const std::string& canvas_id) { return serialize_2dntb(canvas(canvas_id)); }

  /// Replaces the document from .2dntb bytes, creating the canvas if it
  /// does not exist. The runtime is reset: sessions of the old document
  /// are stopped and the new one starts from a fresh main session.
  Canvas replace_file(const std::string& canvas_id, std::string_view bytes) {
    require_canvas_id(canvas_id);
    auto next = parse_2dntb(bytes, canvas_id);
    next.id = canvas_id;
    std::shared_ptr<Document> doc;
    {
      std::lock_guard lock(mutex_);
      if (auto it = docs_.find(canvas_id); it != docs_.end()) {
        doc = it->second;
      } else if (!workspace_.exists(canvas_id)) {
        workspace_.save(next);
        open_locked(next);
        return next;
      }
    }
    if (!doc) doc = document(canvas_id);
    orchestrator_.shutdown_canvas(canvas_id);
    doc->replace(next);
    orchestrator_.register_canvas(doc);
    save_now(canvas_id);
    return doc->snapshot();
  }

  IpynbExport export_ipynb(const std::string& canvas_id) { return ccanvas::export_ipynb(canvas(canvas_id)); }

  /// Imports a notebook as a new canvas. Without an explicit id the
  /// notebook's own canvas id is reused when free.
  IpynbImport import_ipynb(const nlohmann::json& notebook, std::optional<std::string> id = std::nullopt) {
    auto imported = ccanvas::import_ipynb(notebook, "imported");
    std::lock_guard lock(mutex_);
    if (!id && is_valid_canvas_id(imported.canvas.id) && !taken(imported.canvas.id)) id = imported.canvas.id;
    imported.canvas.id = claim_id(id);
    workspace_.save(imported.canvas);
    open_locked(imported.canvas);
    return imported;
  }

  // Events and agents

  std::shared_ptr<Subscription> subscribe(const std::string& canvas_id) {
    return document(canvas_id)->events().subscribe();
  }

  /// One task per canvas at a time; a second concurrent one is a conflict.
  AgentReport run_agent(const std::string& canvas_id, const AgentTask& task) {
    document(canvas_id);
    {
      std::lock_guard lock(mutex_);
      if (!agent_busy_.insert(canvas_id).second) {
        throw Error(ErrorCode::conflict, "an agent task is already running on canvas '" + canvas_id + "'");
      }
    }
    struct Release {
      Service* self;
      const std::string& id;
      ~Release() {
        std::lock_guard lock(self->mutex_);
        self->agent_busy_.erase(id);
      }
    } release{this, canvas_id};
    return run_task(*this, canvas_id, task);
  }

  /// Writes every pending autosave now.
  void flush() { autosaver_->flush_all(); }

  /// Ends every open event stream (used on server shutdown).
  void close_streams() {
    std::vector<std::shared_ptr<Document>> docs;
    {
      std::lock_guard lock(mutex_);
      for (const auto& [_, d] : docs_) docs.push_back(d);
    }
    for (auto& d : docs) d->events().close_all();
  }

 private:
  bool taken(const std::string& id) const { return docs_.contains(id) || workspace_.exists(id); }

  /// Requires mutex_.
  std::string claim_id(const std::optional<std::string>& wanted) const {
    if (wanted) {
      require_canvas_id(*wanted);
      if (taken(*wanted)) throw Error(ErrorCode::conflict, "canvas '" + *wanted + "' already exists");
      return *wanted;
    }
    for (std::uint64_t n = 1;; ++n) {
      auto candidate = "canvas-" + std::to_string(n);
      if (!taken(candidate)) return candidate;
    }
  }

  /// Requires mutex_.
  std::shared_ptr<Document> open_locked(Canvas canvas) {
    auto doc = std::make_shared<Document>(std::move(canvas));
    const auto id = doc->id();
    doc->set_on_change([saver = autosaver_.get(), id] { saver->touch(id); });
    orchestrator_.register_canvas(doc);
    docs_[id] = doc;
    return doc;
  }

  void save_now(const std::string& canvas_id) {
    std::shared_ptr<Document> doc;
    {
      std::lock_guard lock(mutex_);
      auto it = docs_.find(canvas_id);
      if (it == docs_.end()) return;
      doc = it->second;
    }
    try {
      workspace_.save(doc->snapshot());
    } catch (const std::exception& e) {
      doc->warn(std::string("autosave failed: ") + e.what(), {{"path", workspace_.path_for(canvas_id).string()}});
    }
  }

  ServiceOptions options_;
  Workspace workspace_;
  Orchestrator orchestrator_;
  std::unique_ptr<Autosaver> autosaver_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Document>> docs_;
  std::set<std::string> agent_busy_;
};

}  // namespace ccanvas
