#pragma once

// .2dntb files: canonical JSON (sorted keys, two-space indent, LF, trailing
// newline) wrapping the canvas object, so equal canvases give equal bytes.

#include <string>
#include <string_view>

#include "ccanvas/json_codec.hpp"

namespace ccanvas {

inline constexpr std::string_view file_version = "1.0";

inline std::string serialize_2dntb(const Canvas& canvas) {
  nlohmann::json doc = {{"version", file_version}, {"canvas", json_codec::to_json(canvas)}};
  return doc.dump(2) + "\n";
}

namespace detail {

inline bool is_blank(std::string_view bytes) {
  return bytes.find_first_not_of(" \t\r\n") == std::string_view::npos;
}

}  // namespace detail

/// Decodes without checking document invariants. An empty (or
/// whitespace-only) file yields a fresh canvas with the given id.
inline Canvas parse_2dntb_unchecked(std::string_view bytes, const std::string& fresh_id = "canvas") {
  if (detail::is_blank(bytes)) return make_canvas(fresh_id);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::malformed_json, std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::schema_violation, "document root must be an object");
  auto version = doc.find("version");
  if (version == doc.end() || !version->is_string()) {
    throw Error(ErrorCode::schema_violation, "missing string field 'version'");
  }
  if (*version != file_version) {
    throw Error(ErrorCode::unsupported_version, "unsupported .2dntb version '" + version->get<std::string>() + "'");
  }
  auto body = doc.find("canvas");
  if (body == doc.end()) throw Error(ErrorCode::schema_violation, "missing field 'canvas'");
  return json_codec::canvas_from_json(*body);
}

inline Canvas parse_2dntb(std::string_view bytes, const std::string& fresh_id = "canvas") {
  auto canvas = parse_2dntb_unchecked(bytes, fresh_id);
  if (auto violations = check_invariants(canvas); !violations.empty()) {
    std::string msg = "invalid canvas: " + violations.front();
    if (violations.size() > 1) msg += " (and " + std::to_string(violations.size() - 1) + " more)";
    throw Error(ErrorCode::invariant_violation, msg);
  }
  return canvas;
}

}  // namespace ccanvas
