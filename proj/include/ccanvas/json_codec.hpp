#pragma once

// JSON shapes of the document entities. Shared by the .2dntb codec, the
// HTTP surface and the event stream so all three agree on one encoding.

#include <string>

#include "ccanvas/canvas.hpp"
#include "json.hpp"

namespace ccanvas::json_codec {

using nlohmann::json;

namespace detail {

[[noreturn]] inline void fail(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::schema_violation, where + ": " + what);
}

inline const json& field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object()) fail(where, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) fail(where, std::string("missing field '") + key + "'");
  return *it;
}

inline std::string get_string(const json& j, const char* key, const std::string& where) {
  const auto& v = field(j, key, where);
  if (!v.is_string()) fail(where, std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

inline double get_number(const json& j, const char* key, const std::string& where) {
  const auto& v = field(j, key, where);
  if (!v.is_number()) fail(where, std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

inline std::uint64_t get_unsigned(const json& j, const char* key, const std::string& where) {
  const auto& v = field(j, key, where);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    fail(where, std::string("field '") + key + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline bool get_bool(const json& j, const char* key, const std::string& where) {
  const auto& v = field(j, key, where);
  if (!v.is_boolean()) fail(where, std::string("field '") + key + "' must be a boolean");
  return v.get<bool>();
}

}  // namespace detail

inline json to_json(Point p) { return {{"x", p.x}, {"y", p.y}}; }

inline json to_json(const Rect& r) {
  return {{"x", r.origin.x}, {"y", r.origin.y}, {"width", r.width}, {"height", r.height}};
}

inline Point point_from_json(const json& j, const std::string& where) {
  return {detail::get_number(j, "x", where), detail::get_number(j, "y", where)};
}

inline Rect rect_from_json(const json& j, const std::string& where) {
  return {point_from_json(j, where), detail::get_number(j, "width", where), detail::get_number(j, "height", where)};
}

inline json to_json(const OutputItem& item) { return {{"mime", item.mime}, {"data", item.data}}; }

inline OutputItem output_item_from_json(const json& j, const std::string& where) {
  return {detail::get_string(j, "mime", where), detail::get_string(j, "data", where)};
}

inline json to_json(const Bundle& bundle) {
  json arr = json::array();
  for (const auto& item : bundle) arr.push_back(to_json(item));
  return arr;
}

inline Bundle bundle_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) detail::fail(where, "bundle must be an array");
  Bundle bundle;
  for (std::size_t i = 0; i < j.size(); ++i) {
    bundle.push_back(output_item_from_json(j[i], where + ".bundle[" + std::to_string(i) + "]"));
  }
  return bundle;
}

inline json to_json(const Cell& c) {
  json meta = json::object();
  for (const auto& [k, v] : c.metadata) meta[k] = v;
  return {{"id", c.id},
          {"source", c.source},
          {"frame", to_json(c.frame)},
          {"created_seq", c.created_seq},
          {"execution_count", c.execution_count ? json(*c.execution_count) : json(nullptr)},
          {"metadata", std::move(meta)}};
}

inline Cell cell_from_json(const json& j, const std::string& where) {
  Cell c;
  c.id = detail::get_string(j, "id", where);
  c.source = detail::get_string(j, "source", where);
  c.frame = rect_from_json(detail::field(j, "frame", where), where + ".frame");
  c.created_seq = detail::get_unsigned(j, "created_seq", where);
  const auto& count = detail::field(j, "execution_count", where);
  if (!count.is_null()) {
    if (!count.is_number_integer()) detail::fail(where, "execution_count must be an integer or null");
    c.execution_count = count.get<std::int64_t>();
  }
  if (auto it = j.find("metadata"); it != j.end()) {
    if (!it->is_object()) detail::fail(where, "metadata must be an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) detail::fail(where, "metadata values must be strings");
      c.metadata[k] = v.get<std::string>();
    }
  }
  return c;
}

inline json to_json(const std::optional<ProducedBy>& p) {
  if (!p) return nullptr;
  return {{"session_id", p->session_id}, {"execution_count", p->execution_count}};
}

inline json to_json(const OutputCell& o) {
  return {{"id", o.id},
          {"origin_cell_id", o.origin_cell_id},
          {"frame", to_json(o.frame)},
          {"bundle", to_json(o.bundle)},
          {"detached", o.detached},
          {"produced_by", to_json(o.produced_by)}};
}

inline OutputCell output_from_json(const json& j, const std::string& where) {
  OutputCell o;
  o.id = detail::get_string(j, "id", where);
  o.origin_cell_id = detail::get_string(j, "origin_cell_id", where);
  o.frame = rect_from_json(detail::field(j, "frame", where), where + ".frame");
  o.bundle = bundle_from_json(detail::field(j, "bundle", where), where);
  o.detached = detail::get_bool(j, "detached", where);
  if (auto it = j.find("produced_by"); it != j.end() && !it->is_null()) {
    const auto& p = *it;
    const auto& count = detail::field(p, "execution_count", where + ".produced_by");
    if (!count.is_number_integer()) detail::fail(where, "produced_by.execution_count must be an integer");
    o.produced_by = ProducedBy{detail::get_string(p, "session_id", where + ".produced_by"),
                               count.get<std::int64_t>()};
  }
  return o;
}

inline json to_json(const Environment& e) {
  return {{"id", e.id},
          {"region", to_json(e.region)},
          {"color", e.color},
          {"created_seq", e.created_seq},
          {"session_id", e.session_id}};
}

inline Environment environment_from_json(const json& j, const std::string& where) {
  Environment e;
  e.id = detail::get_string(j, "id", where);
  e.region = rect_from_json(detail::field(j, "region", where), where + ".region");
  e.color = detail::get_string(j, "color", where);
  e.created_seq = detail::get_unsigned(j, "created_seq", where);
  e.session_id = detail::get_string(j, "session_id", where);
  return e;
}

inline json to_json(const Canvas& c) {
  json cells = json::object(), outputs = json::object(), envs = json::object();
  for (const auto& [id, cell] : c.cells) cells[id] = to_json(cell);
  for (const auto& [id, out] : c.outputs) outputs[id] = to_json(out);
  for (const auto& [id, env] : c.environments) envs[id] = to_json(env);
  return {{"id", c.id},
          {"title", c.title},
          {"cells", std::move(cells)},
          {"outputs", std::move(outputs)},
          {"environments", std::move(envs)},
          {"next_seq", c.next_seq},
          {"next_output", c.next_output},
          {"format_version", c.format_version}};
}

/// Structural decoding only; document invariants are checked separately.
inline Canvas canvas_from_json(const json& j) {
  const std::string where = "canvas";
  Canvas c;
  c.id = detail::get_string(j, "id", where);
  c.title = detail::get_string(j, "title", where);
  c.next_seq = detail::get_unsigned(j, "next_seq", where);
  c.next_output = j.contains("next_output") ? detail::get_unsigned(j, "next_output", where) : 0;
  c.format_version = detail::get_string(j, "format_version", where);
  auto each = [&](const char* key, auto&& decode, auto& into) {
    const auto& m = detail::field(j, key, where);
    if (!m.is_object()) detail::fail(where, std::string(key) + " must be an object");
    for (const auto& [id, v] : m.items()) {
      into.emplace(id, decode(v, where + "." + key + "." + id));
    }
  };
  each("cells", cell_from_json, c.cells);
  each("outputs", output_from_json, c.outputs);
  each("environments", environment_from_json, c.environments);
  return c;
}

}  // namespace ccanvas::json_codec
