#pragma once

// In-memory canvas document: cells, output cells and environment regions on
// an unbounded plane, plus every mutation rule the document must obey.
// Nothing in here knows about execution; sessions are opaque strings.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "ccanvas/base64.hpp"
#include "ccanvas/error.hpp"
#include "ccanvas/geometry.hpp"
#include "json.hpp"

namespace ccanvas {

namespace mime {
inline constexpr std::string_view stream_stdout = "stream/stdout";
inline constexpr std::string_view stream_stderr = "stream/stderr";
inline constexpr std::string_view text_plain = "text/plain";
inline constexpr std::string_view image_png = "image/png";
inline constexpr std::string_view application_json = "application/json";

inline bool is_supported(std::string_view m) {
  return m == stream_stdout || m == stream_stderr || m == text_plain || m == image_png ||
         m == application_json;
}
}  // namespace mime

namespace layout {
inline constexpr double output_gap = 16.0;
inline constexpr double output_height = 120.0;
}  // namespace layout

inline constexpr std::string_view format_version = "1.0";

struct OutputItem {
  std::string mime;
  std::string data;  // base64 for image/png, JSON text for application/json

  friend bool operator==(const OutputItem&, const OutputItem&) = default;
};

using Bundle = std::vector<OutputItem>;

struct ProducedBy {
  std::string session_id;
  std::int64_t execution_count = 0;

  friend bool operator==(const ProducedBy&, const ProducedBy&) = default;
};

namespace cell_meta {
// Cells imported from markdown/raw notebook cells carry kind=non-code and
// the original notebook cell type.
inline constexpr std::string_view kind = "kind";
inline constexpr std::string_view non_code = "non-code";
inline constexpr std::string_view cell_type = "cell_type";
}  // namespace cell_meta

struct Cell {
  std::string id;
  std::string source;
  Rect frame;
  std::uint64_t created_seq = 0;
  std::optional<std::int64_t> execution_count;
  std::map<std::string, std::string> metadata;

  bool is_code() const {
    auto it = metadata.find(std::string(cell_meta::kind));
    return it == metadata.end() || it->second != cell_meta::non_code;
  }

  friend bool operator==(const Cell&, const Cell&) = default;
};

struct OutputCell {
  std::string id;
  std::string origin_cell_id;
  Rect frame;
  Bundle bundle;
  bool detached = false;
  std::optional<ProducedBy> produced_by;  // absent for imported outputs

  friend bool operator==(const OutputCell&, const OutputCell&) = default;
};

struct Environment {
  std::string id;
  Rect region;
  std::string color;
  std::uint64_t created_seq = 0;
  std::string session_id;

  friend bool operator==(const Environment&, const Environment&) = default;
};

struct Canvas {
  std::string id;
  std::string title;
  std::map<std::string, Cell> cells;
  std::map<std::string, OutputCell> outputs;
  std::map<std::string, Environment> environments;
  std::uint64_t next_seq = 0;
  std::uint64_t next_output = 0;
  std::string format_version{ccanvas::format_version};

  friend bool operator==(const Canvas&, const Canvas&) = default;
};

inline Canvas make_canvas(std::string id, std::string title = {}) {
  Canvas c;
  c.id = std::move(id);
  c.title = std::move(title);
  return c;
}

inline bool is_valid_color(std::string_view color) {
  static const std::regex pattern("^#([0-9a-fA-F]{3}|[0-9a-fA-F]{6}|[0-9a-fA-F]{8})$");
  return std::regex_match(color.begin(), color.end(), pattern);
}

/// Empty string when the item is well-formed, otherwise the reason.
inline std::string check_output_item(const OutputItem& item) {
  if (!mime::is_supported(item.mime)) return "unsupported mime type '" + item.mime + "'";
  if (item.mime == mime::image_png && !base64::is_valid(item.data)) {
    return "image/png data is not valid base64";
  }
  if (item.mime == mime::application_json && !nlohmann::json::accept(item.data)) {
    return "application/json data is not valid JSON";
  }
  return {};
}

namespace detail {

inline std::string unique_key(const auto& map, const std::string& base) {
  if (!map.contains(base)) return base;
  for (int k = 1;; ++k) {
    auto candidate = base + "-" + std::to_string(k);
    if (!map.contains(candidate)) return candidate;
  }
}

template <typename Map>
auto& lookup(Map& map, const std::string& id, const char* what) {
  auto it = map.find(id);
  if (it == map.end()) throw Error(ErrorCode::not_found, std::string("unknown ") + what + " '" + id + "'");
  return it->second;
}

inline void require_bundle(const Bundle& bundle) {
  for (const auto& item : bundle) {
    if (auto why = check_output_item(item); !why.empty()) throw Error(ErrorCode::invalid_argument, why);
  }
}

}  // namespace detail

inline const Cell& get_cell(const Canvas& c, const std::string& id) { return detail::lookup(c.cells, id, "cell"); }
inline const OutputCell& get_output(const Canvas& c, const std::string& id) {
  return detail::lookup(c.outputs, id, "output");
}
inline const Environment& get_environment(const Canvas& c, const std::string& id) {
  return detail::lookup(c.environments, id, "environment");
}

inline Cell create_cell(Canvas& canvas, std::string source, Rect frame) {
  require_valid(frame, "cell frame");
  Cell cell;
  cell.created_seq = canvas.next_seq++;
  cell.id = detail::unique_key(canvas.cells, "cell-" + std::to_string(cell.created_seq));
  cell.source = std::move(source);
  cell.frame = frame;
  canvas.cells.emplace(cell.id, cell);
  return cell;
}

/// Moves only the cell; its output stays where it is.
inline Cell move_cell(Canvas& canvas, const std::string& cell_id, Point new_origin) {
  auto& cell = detail::lookup(canvas.cells, cell_id, "cell");
  require_finite(new_origin, "cell origin");
  cell.frame.origin = new_origin;
  return cell;
}

inline Cell update_cell(Canvas& canvas, const std::string& cell_id, std::optional<std::string> source,
                        std::optional<Rect> frame) {
  auto& cell = detail::lookup(canvas.cells, cell_id, "cell");
  if (frame) require_valid(*frame, "cell frame");
  if (source) cell.source = std::move(*source);
  if (frame) cell.frame = *frame;
  return cell;
}

/// The environment whose region contains the cell's center; the most
/// recently created one wins on overlap. nullopt routes to the main session.
inline std::optional<std::string> resolve_environment(const Canvas& canvas, const std::string& cell_id) {
  const auto center = get_cell(canvas, cell_id).frame.center();
  const Environment* best = nullptr;
  for (const auto& [id, env] : canvas.environments) {
    if (env.region.contains(center) && (!best || env.created_seq > best->created_seq)) best = &env;
  }
  if (!best) return std::nullopt;
  return best->id;
}

/// Existing cells inside the region are left alone; only later executions
/// route through the new environment.
inline Environment create_environment(Canvas& canvas, Rect region, std::string color, std::string session_id) {
  require_valid(region, "environment region");
  if (!is_valid_color(color)) throw Error(ErrorCode::invalid_argument, "invalid color '" + color + "'");
  if (session_id.empty()) throw Error(ErrorCode::invalid_argument, "environment needs a session id");
  Environment env;
  env.created_seq = canvas.next_seq++;
  env.id = detail::unique_key(canvas.environments, "env-" + std::to_string(env.created_seq));
  env.region = region;
  env.color = std::move(color);
  env.session_id = std::move(session_id);
  canvas.environments.emplace(env.id, env);
  return env;
}

struct MoveEnvironmentResult {
  Environment environment;
  std::vector<std::string> moved_cells;
  std::vector<std::string> moved_outputs;
};

/// Rigid translation of the region and everything whose center was inside it
/// before the move.
inline MoveEnvironmentResult move_environment(Canvas& canvas, const std::string& env_id, Delta delta) {
  auto& env = detail::lookup(canvas.environments, env_id, "environment");
  if (!std::isfinite(delta.dx) || !std::isfinite(delta.dy)) {
    throw Error(ErrorCode::invalid_argument, "move delta must be finite");
  }
  const Rect before = env.region;
  MoveEnvironmentResult result;
  for (auto& [id, cell] : canvas.cells) {
    if (before.contains(cell.frame.center())) result.moved_cells.push_back(id);
  }
  for (auto& [id, out] : canvas.outputs) {
    if (before.contains(out.frame.center())) result.moved_outputs.push_back(id);
  }
  env.region.origin = translated(env.region.origin, delta);
  for (const auto& id : result.moved_cells) {
    auto& f = canvas.cells.at(id).frame;
    f.origin = translated(f.origin, delta);
  }
  for (const auto& id : result.moved_outputs) {
    auto& f = canvas.outputs.at(id).frame;
    f.origin = translated(f.origin, delta);
  }
  result.environment = env;
  return result;
}

inline const OutputCell* attached_output(const Canvas& canvas, const std::string& cell_id) {
  for (const auto& [id, out] : canvas.outputs) {
    if (!out.detached && out.origin_cell_id == cell_id) return &out;
  }
  return nullptr;
}

inline Rect default_output_frame(const Rect& cell_frame) {
  return {{cell_frame.origin.x, cell_frame.origin.y + cell_frame.height + layout::output_gap},
          cell_frame.width,
          layout::output_height};
}

/// Replaces the live output of a cell in place (id and frame kept), or
/// creates one directly below the cell.
inline OutputCell attach_or_update_output(Canvas& canvas, const std::string& cell_id, Bundle bundle,
                                          std::optional<ProducedBy> produced_by) {
  const auto& cell = get_cell(canvas, cell_id);
  detail::require_bundle(bundle);
  if (auto* existing = attached_output(canvas, cell_id)) {
    auto& out = canvas.outputs.at(existing->id);
    out.bundle = std::move(bundle);
    out.produced_by = std::move(produced_by);
    return out;
  }
  OutputCell out;
  out.id = detail::unique_key(canvas.outputs, "out-" + std::to_string(canvas.next_output++));
  out.origin_cell_id = cell_id;
  out.frame = default_output_frame(cell.frame);
  out.bundle = std::move(bundle);
  out.produced_by = std::move(produced_by);
  canvas.outputs.emplace(out.id, out);
  return out;
}

inline OutputCell detach_output(Canvas& canvas, const std::string& output_id) {
  auto& out = detail::lookup(canvas.outputs, output_id, "output");
  if (out.detached) throw Error(ErrorCode::already_detached, "output '" + output_id + "' is already detached");
  out.detached = true;
  return out;
}

inline OutputCell move_output(Canvas& canvas, const std::string& output_id, Point new_origin) {
  auto& out = detail::lookup(canvas.outputs, output_id, "output");
  require_finite(new_origin, "output origin");
  out.frame.origin = new_origin;
  return out;
}

/// Removes the cell and its attached output. Detached outputs outlive it.
/// Returns the ids of removed outputs.
inline std::vector<std::string> delete_cell(Canvas& canvas, const std::string& cell_id) {
  detail::lookup(canvas.cells, cell_id, "cell");
  std::vector<std::string> removed;
  for (auto it = canvas.outputs.begin(); it != canvas.outputs.end();) {
    if (!it->second.detached && it->second.origin_cell_id == cell_id) {
      removed.push_back(it->first);
      it = canvas.outputs.erase(it);
    } else {
      ++it;
    }
  }
  canvas.cells.erase(cell_id);
  return removed;
}

inline void delete_output(Canvas& canvas, const std::string& output_id) {
  detail::lookup(canvas.outputs, output_id, "output");
  canvas.outputs.erase(output_id);
}

/// Removes the region only; contained cells stay where they are.
inline Environment delete_environment(Canvas& canvas, const std::string& env_id) {
  auto env = detail::lookup(canvas.environments, env_id, "environment");
  canvas.environments.erase(env_id);
  return env;
}

/// Frames of every cell, output and environment.
inline std::vector<Rect> content_rects(const Canvas& canvas) {
  std::vector<Rect> rects;
  for (const auto& [_, c] : canvas.cells) rects.push_back(c.frame);
  for (const auto& [_, o] : canvas.outputs) rects.push_back(o.frame);
  for (const auto& [_, e] : canvas.environments) rects.push_back(e.region);
  return rects;
}

/// One human-readable line per violated document invariant.
inline std::vector<std::string> check_invariants(const Canvas& canvas) {
  std::vector<std::string> v;
  if (canvas.format_version != ccanvas::format_version) {
    v.push_back("unsupported format_version '" + canvas.format_version + "'");
  }
  std::map<std::uint64_t, std::string> seqs;
  auto claim_seq = [&](std::uint64_t seq, const std::string& who) {
    if (seq >= canvas.next_seq) {
      v.push_back(who + ": created_seq " + std::to_string(seq) + " is not below next_seq " +
                  std::to_string(canvas.next_seq));
    }
    auto [it, fresh] = seqs.emplace(seq, who);
    if (!fresh) v.push_back(who + ": created_seq " + std::to_string(seq) + " already used by " + it->second);
  };
  for (const auto& [key, cell] : canvas.cells) {
    const auto who = "cell '" + key + "'";
    if (cell.id != key) v.push_back(who + ": id field '" + cell.id + "' does not match its key");
    if (!is_valid(cell.frame)) v.push_back(who + ": frame must have positive size and finite coordinates");
    if (cell.execution_count && *cell.execution_count <= 0) v.push_back(who + ": execution_count must be positive");
    claim_seq(cell.created_seq, who);
  }
  for (const auto& [key, env] : canvas.environments) {
    const auto who = "environment '" + key + "'";
    if (env.id != key) v.push_back(who + ": id field '" + env.id + "' does not match its key");
    if (!is_valid(env.region)) v.push_back(who + ": region must have positive size and finite coordinates");
    if (!is_valid_color(env.color)) v.push_back(who + ": invalid color '" + env.color + "'");
    if (env.session_id.empty()) v.push_back(who + ": missing session_id");
    claim_seq(env.created_seq, who);
  }
  std::map<std::string, std::string> attached;
  for (const auto& [key, out] : canvas.outputs) {
    const auto who = "output '" + key + "'";
    if (out.id != key) v.push_back(who + ": id field '" + out.id + "' does not match its key");
    if (!is_valid(out.frame)) v.push_back(who + ": frame must have positive size and finite coordinates");
    for (std::size_t i = 0; i < out.bundle.size(); ++i) {
      if (auto why = check_output_item(out.bundle[i]); !why.empty()) {
        v.push_back(who + ": item " + std::to_string(i) + ": " + why);
      }
    }
    if (out.detached) continue;
    if (!canvas.cells.contains(out.origin_cell_id)) {
      v.push_back(who + ": attached to unknown cell '" + out.origin_cell_id + "'");
    }
    auto [it, fresh] = attached.emplace(out.origin_cell_id, key);
    if (!fresh) {
      v.push_back("cell '" + out.origin_cell_id + "' has more than one attached output ('" + it->second +
                  "', '" + key + "')");
    }
  }
  return v;
}

}  // namespace ccanvas
