#pragma once

// Minimal REST client for a running canvas service. Satisfies the client
// interface of run_task, so an agent can drive a remote canvas.

#include <chrono>
#include <string>

#include "ccanvas/agent.hpp"
#include "httplib.h"

namespace ccanvas {

class HttpCanvasClient {
 public:
  HttpCanvasClient(const std::string& host, int port) : client_(host, port) {
    client_.set_read_timeout(std::chrono::seconds(180));
    client_.set_write_timeout(std::chrono::seconds(30));
  }

  nlohmann::json get(const std::string& path) { return check(client_.Get(path)); }

  nlohmann::json post(const std::string& path, const nlohmann::json& body = nlohmann::json::object()) {
    return check(client_.Post(path, body.dump(), "application/json"));
  }

  nlohmann::json patch(const std::string& path, const nlohmann::json& body) {
    return check(client_.Patch(path, body.dump(), "application/json"));
  }

  nlohmann::json del(const std::string& path) { return check(client_.Delete(path)); }

  Canvas canvas(const std::string& canvas_id) { return json_codec::canvas_from_json(get("/canvases/" + canvas_id)); }

  EnvironmentCreated create_environment(const std::string& canvas_id, Rect region, std::string color) {
    auto j = post("/canvases/" + canvas_id + "/environments",
                  {{"region", json_codec::to_json(region)}, {"color", std::move(color)}});
    EnvironmentCreated out;
    out.environment = json_codec::environment_from_json(j.at("environment"), "environment");
    out.warnings = j.at("warnings").get<std::vector<std::string>>();
    return out;
  }

  Cell create_cell(const std::string& canvas_id, std::string source, Rect frame) {
    auto j = post("/canvases/" + canvas_id + "/cells", {{"source", std::move(source)}, {"frame", json_codec::to_json(frame)}});
    return json_codec::cell_from_json(j, "cell");
  }

  ExecutionResult execute(const std::string& canvas_id, const std::string& cell_id) {
    return execution_result_from_json(post("/canvases/" + canvas_id + "/cells/" + cell_id + "/execute"));
  }

 private:
  /// Non-2xx replies become Errors carrying the server's code.
  static nlohmann::json check(const httplib::Result& r) {
    if (!r) throw Error(ErrorCode::io_error, "request failed: " + httplib::to_string(r.error()));
    nlohmann::json body = nlohmann::json::parse(r->body, nullptr, false);
    if (r->status >= 200 && r->status < 300) {
      if (body.is_discarded()) throw Error(ErrorCode::malformed_json, "response is not JSON");
      return body;
    }
    ErrorCode code = ErrorCode::worker_failure;
    std::string message = "HTTP " + std::to_string(r->status);
    if (body.is_object() && body.contains("code") && body["code"].is_string()) {
      if (auto parsed = error_code_from_string(body["code"].get<std::string>())) code = *parsed;
      if (body.contains("message") && body["message"].is_string()) message = body["message"].get<std::string>();
    }
    throw Error(code, message);
  }

  httplib::Client client_;
};

}  // namespace ccanvas
