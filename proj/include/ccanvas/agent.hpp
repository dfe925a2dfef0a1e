#pragma once

// Scripted stand-in for an assistant that works on the canvas: it claims a
// free spot, opens its own environment there (a fork of main) and runs its
// steps as cells inside it. It only talks to the canvas through a client
// object, so the same driver works in-process and over HTTP.

#include <optional>
#include <string>
#include <vector>

#include "ccanvas/orchestrator.hpp"

namespace ccanvas {

namespace agent_layout {
inline constexpr double margin = 64.0;   // distance from existing content
inline constexpr double padding = 32.0;  // inside the environment region
inline constexpr double cell_width = 480.0;
inline constexpr double cell_height = 80.0;
inline constexpr double cell_gap = 56.0;
inline constexpr std::string_view color = "#4D9DE0";
}  // namespace agent_layout

struct AgentTask {
  std::string name;
  std::vector<std::string> steps;
  bool stop_on_error = true;
};

/// What the report keeps of one execution. Timing is left out so identical
/// runs produce identical reports.
struct StepSummary {
  std::string cell_id;
  std::string status;
  std::int64_t execution_count = 0;
  std::optional<std::string> result_repr;
  Bundle bundle;
  std::optional<std::string> output_id;

  friend bool operator==(const StepSummary&, const StepSummary&) = default;
};

struct AgentReport {
  std::string env_id;
  std::vector<std::string> cell_ids;
  std::vector<StepSummary> steps;
  std::string status;  // "completed" or "failed-at-step-<k>", k counted from 1
  std::vector<std::string> warnings;

  friend bool operator==(const AgentReport&, const AgentReport&) = default;
};

inline AgentTask agent_task_from_json(const nlohmann::json& j) {
  const std::string where = "agent task";
  namespace d = json_codec::detail;
  AgentTask task;
  task.name = j.contains("name") ? d::get_string(j, "name", where) : std::string();
  const auto& steps = d::field(j, "steps", where);
  if (!steps.is_array()) d::fail(where, "steps must be an array of strings");
  for (const auto& s : steps) {
    if (!s.is_string()) d::fail(where, "steps must be an array of strings");
    task.steps.push_back(s.get<std::string>());
  }
  if (task.steps.empty()) throw Error(ErrorCode::invalid_argument, "an agent task needs at least one step");
  if (j.contains("stop_on_error")) task.stop_on_error = d::get_bool(j, "stop_on_error", where);
  return task;
}

inline nlohmann::json to_json(const AgentTask& t) {
  return {{"name", t.name}, {"steps", t.steps}, {"stop_on_error", t.stop_on_error}};
}

inline nlohmann::json to_json(const StepSummary& s) {
  auto opt = [](const std::optional<std::string>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"cell_id", s.cell_id},
          {"status", s.status},
          {"execution_count", s.execution_count},
          {"result_repr", opt(s.result_repr)},
          {"bundle", json_codec::to_json(s.bundle)},
          {"output_id", opt(s.output_id)}};
}

inline nlohmann::json to_json(const AgentReport& r) {
  auto steps = nlohmann::json::array();
  for (const auto& s : r.steps) steps.push_back(to_json(s));
  return {{"env_id", r.env_id}, {"cell_ids", r.cell_ids}, {"steps", steps}, {"status", r.status}, {"warnings", r.warnings}};
}

inline std::optional<std::string> optional_string(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw Error(ErrorCode::schema_violation, std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

inline ExecutionResult execution_result_from_json(const nlohmann::json& j) {
  const std::string where = "execution result";
  namespace d = json_codec::detail;
  ExecutionResult r;
  r.status = d::get_string(j, "status", where);
  r.bundle = json_codec::bundle_from_json(d::field(j, "bundle", where), where + ".bundle");
  r.execution_count = d::field(j, "execution_count", where).get<std::int64_t>();
  r.duration_ms = d::get_number(j, "duration_ms", where);
  r.session_id = d::get_string(j, "session_id", where);
  r.cell_id = d::get_string(j, "cell_id", where);
  r.output_id = optional_string(j, "output_id");
  return r;
}

inline StepSummary summarize(const ExecutionResult& r) {
  StepSummary s{r.cell_id, r.status, r.execution_count, std::nullopt, r.bundle, r.output_id};
  for (const auto& item : r.bundle) {
    if (item.mime == mime::text_plain) s.result_repr = item.data;
  }
  return s;
}

/// A rect of the requested size clear of all content: right of the content
/// bounding box by the margin, level with its top. Empty canvas: (0,0).
inline Rect free_region(const Canvas& canvas, double width, double height) {
  if (!(width > 0) || !(height > 0)) throw Error(ErrorCode::invalid_argument, "free_region needs a positive size");
  auto rects = content_rects(canvas);
  auto box = bounding_box(rects);
  if (!box) return {{0, 0}, width, height};
  return {{box->right() + agent_layout::margin, box->top()}, width, height};
}

inline double agent_region_height(std::size_t steps) {
  const auto n = static_cast<double>(steps);
  return 2 * agent_layout::padding + n * agent_layout::cell_height + (n - 1) * agent_layout::cell_gap;
}

inline Rect agent_cell_frame(const Rect& region, std::size_t index) {
  return {{region.left() + agent_layout::padding,
           region.top() + agent_layout::padding +
               static_cast<double>(index) * (agent_layout::cell_height + agent_layout::cell_gap)},
          agent_layout::cell_width,
          agent_layout::cell_height};
}

/// Where the agent puts its environment. On an empty canvas the content box
/// degenerates to the origin point, so the region still keeps the margin.
inline Rect agent_region(const Canvas& canvas, std::size_t steps) {
  const double w = agent_layout::cell_width + 2 * agent_layout::padding;
  const double h = agent_region_height(steps);
  if (content_rects(canvas).empty()) return {{agent_layout::margin, 0}, w, h};
  return free_region(canvas, w, h);
}

/// Client requirements:
///   Canvas canvas(id);
///   EnvironmentCreated create_environment(id, Rect, std::string color);
///   Cell create_cell(id, std::string source, Rect frame);
///   ExecutionResult execute(id, cell_id);
template <class Client>
AgentReport run_task(Client& client, const std::string& canvas_id, const AgentTask& task) {
  if (task.steps.empty()) throw Error(ErrorCode::invalid_argument, "an agent task needs at least one step");
  const auto region = agent_region(client.canvas(canvas_id), task.steps.size());
  auto created = client.create_environment(canvas_id, region, std::string(agent_layout::color));

  AgentReport report;
  report.env_id = created.environment.id;
  report.warnings = created.warnings;
  report.status = "completed";
  for (std::size_t i = 0; i < task.steps.size(); ++i) {
    auto cell = client.create_cell(canvas_id, task.steps[i], agent_cell_frame(region, i));
    report.cell_ids.push_back(cell.id);
    auto result = client.execute(canvas_id, cell.id);
    report.steps.push_back(summarize(result));
    if (result.status != "ok") {
      if (report.status == "completed") report.status = "failed-at-step-" + std::to_string(i + 1);
      if (task.stop_on_error) break;
    }
  }
  return report;
}

}  // namespace ccanvas
