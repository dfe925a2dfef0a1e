#pragma once

// Conversion between canvases and Jupyter nbformat 4.5 notebooks.
//
// Export writes cells in creation order. Everything a linear notebook cannot
// express (geometry, detached outputs, environments) rides along in
// "canvas" metadata objects that vanilla Jupyter ignores, which is what
// makes canvas -> ipynb -> canvas lossless. Notebooks without that metadata
// get a single-column layout on import.

#include <algorithm>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "ccanvas/detail/nbformat_schema.hpp"
#include "ccanvas/json_codec.hpp"
#include "ccanvas/json_schema.hpp"

namespace ccanvas {

namespace ipynb_layout {
inline constexpr double cell_width = 480.0;
inline constexpr double cell_height = 80.0;
inline constexpr double cell_gap = 56.0;
}  // namespace ipynb_layout

struct IpynbExport {
  nlohmann::json notebook;
  std::vector<std::string> warnings;
};

struct IpynbImport {
  Canvas canvas;
  std::vector<std::string> warnings;
};

inline const JsonSchema& nbformat_schema() {
  static const JsonSchema schema(nlohmann::json::parse(detail::nbformat_v4_5_schema));
  return schema;
}

namespace detail {

using nlohmann::json;

inline json to_lines(const std::string& text) {
  json lines = json::array();
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    auto end = nl == std::string::npos ? text.size() : nl + 1;
    lines.push_back(text.substr(start, end - start));
    start = end;
  }
  return lines;
}

inline std::string from_multiline(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  std::string text;
  for (const auto& part : j) text += part.get<std::string>();
  return text;
}

inline bool is_notebook_cell_id(const std::string& id) {
  static const std::regex pattern("^[a-zA-Z0-9_-]{1,64}$");
  return std::regex_match(id, pattern);
}

/// The nbformat mime key a canvas item is stored under inside
/// execute_result / display_data outputs.
inline std::string notebook_mime(const std::string& canvas_mime) {
  if (canvas_mime == mime::image_png || canvas_mime == mime::application_json) return canvas_mime;
  return std::string(mime::text_plain);
}

inline json display_data(const OutputItem& item) {
  json data = json::object();
  const auto key = notebook_mime(item.mime);
  if (item.mime == mime::application_json) data[key] = json::parse(item.data);
  else if (item.mime == mime::image_png) data[key] = item.data;
  else data[key] = to_lines(item.data);
  return {{"output_type", "display_data"}, {"data", std::move(data)}, {"metadata", json::object()}};
}

inline json attached_output(const OutputItem& item, const Cell& cell) {
  if (item.mime == mime::stream_stdout || item.mime == mime::stream_stderr) {
    return {{"output_type", "stream"},
            {"name", item.mime == mime::stream_stdout ? "stdout" : "stderr"},
            {"text", to_lines(item.data)}};
  }
  if (item.mime == mime::text_plain) {
    return {{"output_type", "execute_result"},
            {"execution_count", cell.execution_count ? json(*cell.execution_count) : json(nullptr)},
            {"data", {{"text/plain", to_lines(item.data)}}},
            {"metadata", json::object()}};
  }
  return display_data(item);
}

inline json output_record(const OutputCell& out) {
  json mimes = json::array();
  for (const auto& item : out.bundle) mimes.push_back(item.mime);
  return {{"id", out.id},
          {"frame", json_codec::to_json(out.frame)},
          {"detached", out.detached},
          {"produced_by", json_codec::to_json(out.produced_by)},
          {"mimes", std::move(mimes)}};
}

/// Reads one canvas item back out of a notebook output.
inline OutputItem item_from_notebook(const json& output, const std::string& canvas_mime) {
  const auto type = output.at("output_type").get<std::string>();
  if (type == "stream") return {canvas_mime, from_multiline(output.at("text"))};
  if (type == "error") {
    throw Error(ErrorCode::schema_violation, "canvas metadata points at an error output");
  }
  const auto& data = output.at("data");
  const auto key = notebook_mime(canvas_mime);
  if (!data.contains(key)) {
    throw Error(ErrorCode::schema_violation, "canvas metadata expects '" + key + "' data in output");
  }
  const auto& value = data.at(key);
  if (canvas_mime == mime::application_json) return {canvas_mime, value.dump()};
  return {canvas_mime, from_multiline(value)};
}

/// Best-effort translation of a plain notebook output; nullopt when it has
/// nothing the canvas can show.
inline std::optional<OutputItem> item_from_plain(const json& output) {
  const auto type = output.at("output_type").get<std::string>();
  if (type == "stream") {
    const auto name = output.at("name").get<std::string>();
    return OutputItem{std::string(name == "stderr" ? mime::stream_stderr : mime::stream_stdout),
                      from_multiline(output.at("text"))};
  }
  if (type == "error") {
    std::string text;
    for (const auto& line : output.at("traceback")) {
      if (!text.empty()) text += "\n";
      text += line.get<std::string>();
    }
    if (text.empty()) text = output.at("ename").get<std::string>() + ": " + output.at("evalue").get<std::string>();
    return OutputItem{std::string(mime::stream_stderr), text + "\n"};
  }
  const auto& data = output.at("data");
  if (data.contains("image/png")) return OutputItem{std::string(mime::image_png), from_multiline(data["image/png"])};
  if (data.contains("application/json")) {
    return OutputItem{std::string(mime::application_json), data["application/json"].dump()};
  }
  if (data.contains("text/plain")) return OutputItem{std::string(mime::text_plain), from_multiline(data["text/plain"])};
  return std::nullopt;
}

}  // namespace detail

/// Notebook cells appear in created_seq order. Detached outputs follow the
/// live output on their origin cell; detached outputs whose origin cell is
/// gone cannot be placed and are reported in warnings.
inline IpynbExport export_ipynb(const Canvas& canvas) {
  using nlohmann::json;
  IpynbExport result;

  std::vector<const Cell*> ordered;
  for (const auto& [_, cell] : canvas.cells) ordered.push_back(&cell);
  std::sort(ordered.begin(), ordered.end(),
            [](const Cell* a, const Cell* b) { return a->created_seq < b->created_seq; });

  std::set<std::string> used_ids;
  json cells = json::array();
  for (const Cell* cell : ordered) {
    std::vector<const OutputCell*> outs;
    if (const auto* live = attached_output(canvas, cell->id)) outs.push_back(live);
    for (const auto& [_, out] : canvas.outputs) {
      if (out.detached && out.origin_cell_id == cell->id) outs.push_back(&out);
    }

    json records = json::array();
    json nb_outputs = json::array();
    for (const auto* out : outs) {
      records.push_back(detail::output_record(*out));
      for (const auto& item : out->bundle) {
        nb_outputs.push_back(out->detached ? detail::display_data(item) : detail::attached_output(item, *cell));
      }
    }

    json cell_meta = json::object();
    for (const auto& [k, v] : cell->metadata) cell_meta[k] = v;
    json canvas_meta = {{"id", cell->id},
                        {"frame", json_codec::to_json(cell->frame)},
                        {"created_seq", cell->created_seq},
                        {"metadata", std::move(cell_meta)},
                        {"outputs", std::move(records)}};

    std::string nb_id = detail::is_notebook_cell_id(cell->id) && !used_ids.contains(cell->id)
                            ? cell->id
                            : "c" + std::to_string(cell->created_seq);
    used_ids.insert(nb_id);

    json nb_cell = {{"id", nb_id},
                    {"metadata", {{"canvas", std::move(canvas_meta)}}},
                    {"source", detail::to_lines(cell->source)}};
    if (cell->is_code()) {
      nb_cell["cell_type"] = "code";
      nb_cell["execution_count"] = cell->execution_count ? json(*cell->execution_count) : json(nullptr);
      nb_cell["outputs"] = std::move(nb_outputs);
    } else {
      auto type = cell->metadata.find(std::string(cell_meta::cell_type));
      nb_cell["cell_type"] = type != cell->metadata.end() && type->second == "raw" ? "raw" : "markdown";
    }
    cells.push_back(std::move(nb_cell));
  }

  for (const auto& [id, out] : canvas.outputs) {
    if (out.detached && !canvas.cells.contains(out.origin_cell_id)) {
      result.warnings.push_back("detached output '" + id + "' dropped: origin cell '" + out.origin_cell_id +
                                "' no longer exists");
    }
  }

  json envs = json::object();
  for (const auto& [id, env] : canvas.environments) envs[id] = json_codec::to_json(env);
  json nb_meta = {
      {"kernelspec", {{"name", "python3"}, {"display_name", "Python 3"}, {"language", "python"}}},
      {"language_info", {{"name", "python"}}},
      {"canvas",
       {{"id", canvas.id},
        {"title", canvas.title},
        {"next_seq", canvas.next_seq},
        {"next_output", canvas.next_output},
        {"format_version", canvas.format_version},
        {"environments", std::move(envs)}}}};

  result.notebook = {{"nbformat", 4}, {"nbformat_minor", 5}, {"metadata", std::move(nb_meta)}, {"cells", std::move(cells)}};
  return result;
}

/// Accepts any nbformat 4 notebook. Minor versions before 5 lack cell ids;
/// they are validated as if ids were present.
inline IpynbImport import_ipynb(const nlohmann::json& notebook, const std::string& fallback_id = "canvas") {
  using nlohmann::json;
  if (!notebook.is_object()) throw Error(ErrorCode::schema_violation, "notebook root must be an object");
  auto major = notebook.find("nbformat");
  if (major == notebook.end() || !major->is_number_integer()) {
    throw Error(ErrorCode::schema_violation, "missing integer field 'nbformat'");
  }
  if (*major != 4) {
    throw Error(ErrorCode::unsupported_version, "only nbformat 4 notebooks are supported, got " + major->dump());
  }
  {
    json normalized = notebook;
    if (normalized.contains("cells") && normalized["cells"].is_array()) {
      int k = 0;
      for (auto& c : normalized["cells"]) {
        if (c.is_object() && !c.contains("id")) c["id"] = "x" + std::to_string(k);
        ++k;
      }
    }
    normalized["nbformat_minor"] = 5;
    if (auto errors = nbformat_schema().validate(normalized); !errors.empty()) {
      throw Error(ErrorCode::schema_violation, "notebook violates nbformat 4 schema: " + errors.front());
    }
  }

  IpynbImport result;
  Canvas& canvas = result.canvas;
  canvas = make_canvas(fallback_id);

  const json* nb_canvas = nullptr;
  if (auto m = notebook["metadata"].find("canvas"); m != notebook["metadata"].end() && m->is_object()) nb_canvas = &*m;
  if (nb_canvas) {
    const std::string where = "notebook metadata.canvas";
    canvas.id = json_codec::detail::get_string(*nb_canvas, "id", where);
    canvas.title = json_codec::detail::get_string(*nb_canvas, "title", where);
    canvas.next_seq = json_codec::detail::get_unsigned(*nb_canvas, "next_seq", where);
    canvas.next_output = json_codec::detail::get_unsigned(*nb_canvas, "next_output", where);
    canvas.format_version = json_codec::detail::get_string(*nb_canvas, "format_version", where);
    if (auto envs = nb_canvas->find("environments"); envs != nb_canvas->end()) {
      for (const auto& [id, e] : envs->items()) {
        canvas.environments.emplace(id, json_codec::environment_from_json(e, where + ".environments." + id));
      }
    }
  }

  const auto& nb_cells = notebook["cells"];
  std::set<std::string> seen_ids;
  for (std::size_t i = 0; i < nb_cells.size(); ++i) {
    const auto& nb_cell = nb_cells[i];
    const auto type = nb_cell["cell_type"].get<std::string>();
    const std::string where = "cells[" + std::to_string(i) + "]";
    const json* meta = nullptr;
    if (auto m = nb_cell["metadata"].find("canvas"); m != nb_cell["metadata"].end() && m->is_object()) meta = &*m;

    Cell cell;
    cell.source = detail::from_multiline(nb_cell["source"]);
    if (type == "code" && !nb_cell["execution_count"].is_null()) {
      cell.execution_count = nb_cell["execution_count"].get<std::int64_t>();
    }

    if (meta) {
      cell.id = json_codec::detail::get_string(*meta, "id", where + ".metadata.canvas");
      cell.frame = json_codec::rect_from_json(json_codec::detail::field(*meta, "frame", where), where + ".frame");
      cell.created_seq = json_codec::detail::get_unsigned(*meta, "created_seq", where + ".metadata.canvas");
      if (auto cm = meta->find("metadata"); cm != meta->end()) {
        for (const auto& [k, v] : cm->items()) cell.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    } else {
      auto nb_id = nb_cell.contains("id") ? nb_cell["id"].get<std::string>() : std::string{};
      cell.id = !nb_id.empty() && !seen_ids.contains(nb_id) ? nb_id : "cell-" + std::to_string(i);
      cell.frame = {{0.0, static_cast<double>(i) * (ipynb_layout::cell_height + ipynb_layout::cell_gap)},
                    ipynb_layout::cell_width,
                    ipynb_layout::cell_height};
      cell.created_seq = i;
      canvas.next_seq = std::max<std::uint64_t>(canvas.next_seq, i + 1);
    }
    if (type != "code") {
      cell.metadata[std::string(cell_meta::kind)] = std::string(cell_meta::non_code);
      cell.metadata[std::string(cell_meta::cell_type)] = type;
    }
    if (seen_ids.contains(cell.id)) throw Error(ErrorCode::schema_violation, where + ": duplicate cell id '" + cell.id + "'");
    seen_ids.insert(cell.id);

    const json empty = json::array();
    const json& nb_outputs = type == "code" ? nb_cell["outputs"] : empty;
    if (meta && meta->contains("outputs")) {
      std::size_t cursor = 0;
      for (const auto& record : (*meta)["outputs"]) {
        const std::string rwhere = where + ".metadata.canvas.outputs";
        OutputCell out;
        out.id = json_codec::detail::get_string(record, "id", rwhere);
        out.origin_cell_id = cell.id;
        out.frame = json_codec::rect_from_json(json_codec::detail::field(record, "frame", rwhere), rwhere + ".frame");
        out.detached = json_codec::detail::get_bool(record, "detached", rwhere);
        if (auto p = record.find("produced_by"); p != record.end() && !p->is_null()) {
          out.produced_by = ProducedBy{p->at("session_id").get<std::string>(), p->at("execution_count").get<std::int64_t>()};
        }
        for (const auto& m : json_codec::detail::field(record, "mimes", rwhere)) {
          if (cursor >= nb_outputs.size()) {
            throw Error(ErrorCode::schema_violation, rwhere + ": more recorded items than notebook outputs");
          }
          out.bundle.push_back(detail::item_from_notebook(nb_outputs[cursor++], m.get<std::string>()));
        }
        canvas.outputs.emplace(out.id, std::move(out));
      }
      if (cursor != nb_outputs.size()) {
        throw Error(ErrorCode::schema_violation, where + ": notebook outputs not covered by canvas metadata");
      }
    } else if (!nb_outputs.empty()) {
      Bundle bundle;
      for (const auto& o : nb_outputs) {
        if (auto item = detail::item_from_plain(o)) {
          bundle.push_back(std::move(*item));
        } else {
          result.warnings.push_back(where + ": output without a supported mime type dropped");
        }
      }
      OutputCell out;
      out.id = "out-" + std::to_string(canvas.next_output++);
      out.origin_cell_id = cell.id;
      out.frame = default_output_frame(cell.frame);
      out.bundle = std::move(bundle);
      canvas.outputs.emplace(out.id, std::move(out));
    }
    canvas.cells.emplace(cell.id, std::move(cell));
  }

  if (auto violations = check_invariants(canvas); !violations.empty()) {
    throw Error(ErrorCode::invariant_violation, "imported canvas is inconsistent: " + violations.front());
  }
  return result;
}

}  // namespace ccanvas
