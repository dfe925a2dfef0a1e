#pragma once

// REST + server-sent-events front end for a Service.

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <thread>

#include "ccanvas/service.hpp"
#include "httplib.h"

namespace ccanvas {

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict:
    case ErrorCode::already_detached:
    case ErrorCode::environment_terminated: return 409;
    case ErrorCode::invalid_argument:
    case ErrorCode::not_executable:
    case ErrorCode::malformed_json:
    case ErrorCode::unsupported_version:
    case ErrorCode::schema_violation:
    case ErrorCode::invariant_violation: return 422;
    case ErrorCode::frame_too_large: return 413;
    case ErrorCode::timeout: return 504;
    default: return 500;
  }
}

inline nlohmann::json error_body(ErrorCode code, const std::string& message) {
  return {{"code", std::string(to_string(code))}, {"message", message}};
}

class HttpServer {
 public:
  static constexpr std::size_t worker_threads = 32;

  explicit HttpServer(Service& service) : service_(service) {
    server_.new_task_queue = [] { return new httplib::ThreadPool(worker_threads); };
    server_.set_payload_max_length(std::size_t{256} << 20);
    // The library default adds SO_REUSEPORT, which lets a second server
    // share a busy port instead of failing.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const Error& e) {
        reply_error(res, e.code(), e.what());
      } catch (const nlohmann::json::exception& e) {
        reply_error(res, ErrorCode::schema_violation, e.what());
      } catch (const std::exception& e) {
        reply_error(res, ErrorCode::worker_failure, e.what());
      }
    });
    routes();
  }

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  ~HttpServer() { stop(); }

  /// Binds (port 0 picks a free port) and serves on a background thread.
  /// Returns the bound port; throws io_error if the address is unavailable.
  int start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
      bound = server_.bind_to_any_port(host);
      if (bound < 0) throw Error(ErrorCode::io_error, "cannot bind " + host);
    } else if (!server_.bind_to_port(host, port)) {
      throw Error(ErrorCode::io_error, "cannot bind " + host + ":" + std::to_string(port));
    }
    port_ = bound;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  int port() const noexcept { return port_; }

  void stop() {
    stopping_ = true;
    service_.close_streams();
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  using Req = httplib::Request;
  using Res = httplib::Response;
  using json = nlohmann::json;

  static void reply_error(Res& res, ErrorCode code, const std::string& message) {
    res.status = http_status(code);
    res.set_content(error_body(code, message).dump(), "application/json");
  }

  static void reply(Res& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static json body(const Req& req) {
    if (req.body.empty()) return json::object();
    try {
      auto j = json::parse(req.body);
      if (!j.is_object()) throw Error(ErrorCode::invalid_argument, "request body must be a JSON object");
      return j;
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::malformed_json, std::string("request body is not JSON: ") + e.what());
    }
  }

  static std::string arg(const Req& req, std::size_t i) { return req.matches[static_cast<int>(i)].str(); }

  void routes() {
    auto& s = service_;
    const std::string c = R"(/canvases/([^/]+))";

    server_.Get("/canvases", [&s](const Req&, Res& res) {
      auto out = json::array();
      for (const auto& summary : s.list_canvases()) out.push_back(to_json(summary));
      reply(res, out);
    });
    server_.Post("/canvases/import/ipynb", [&s](const Req& req, Res& res) {
      json notebook;
      try {
        notebook = json::parse(req.body);
      } catch (const json::parse_error& e) {
        throw Error(ErrorCode::malformed_json, std::string("notebook is not JSON: ") + e.what());
      }
      std::optional<std::string> id;
      if (req.has_param("id")) id = req.get_param_value("id");
      auto imported = s.import_ipynb(notebook, id);
      reply(res, {{"canvas", json_codec::to_json(imported.canvas)}, {"warnings", imported.warnings}}, 201);
    });
    server_.Post("/canvases", [&s](const Req& req, Res& res) {
      auto b = body(req);
      auto id = optional_string(b, "id");
      auto title = optional_string(b, "title");
      reply(res, json_codec::to_json(s.create_canvas(id, title.value_or(""))), 201);
    });
    server_.Get(c, [&s](const Req& req, Res& res) { reply(res, json_codec::to_json(s.canvas(arg(req, 1)))); });
    server_.Delete(c, [&s](const Req& req, Res& res) {
      s.delete_canvas(arg(req, 1));
      reply(res, {{"deleted", arg(req, 1)}});
    });

    server_.Post(c + "/cells", [&s](const Req& req, Res& res) {
      auto b = body(req);
      auto source = optional_string(b, "source").value_or("");
      auto frame = json_codec::rect_from_json(json_codec::detail::field(b, "frame", "cell"), "cell.frame");
      reply(res, json_codec::to_json(s.create_cell(arg(req, 1), source, frame)), 201);
    });
    server_.Patch(c + "/cells/([^/]+)", [&s](const Req& req, Res& res) {
      auto b = body(req);
      auto source = optional_string(b, "source");
      std::optional<Rect> frame;
      if (b.contains("frame")) frame = json_codec::rect_from_json(b["frame"], "cell.frame");
      if (!source && !frame) throw Error(ErrorCode::invalid_argument, "nothing to update: give source and/or frame");
      reply(res, json_codec::to_json(s.update_cell(arg(req, 1), arg(req, 2), source, frame)));
    });
    server_.Delete(c + "/cells/([^/]+)", [&s](const Req& req, Res& res) {
      auto removed = s.delete_cell(arg(req, 1), arg(req, 2));
      reply(res, {{"deleted", arg(req, 2)}, {"removed_outputs", removed}});
    });
    server_.Post(c + "/cells/([^/]+)/execute", [&s](const Req& req, Res& res) {
      reply(res, to_json(s.execute(arg(req, 1), arg(req, 2))));
    });

    server_.Post(c + "/environments", [&s](const Req& req, Res& res) {
      auto b = body(req);
      auto region = json_codec::rect_from_json(json_codec::detail::field(b, "region", "environment"), "region");
      auto color = optional_string(b, "color").value_or("#4D9DE0");
      auto created = s.create_environment(arg(req, 1), region, color);
      reply(res, {{"environment", json_codec::to_json(created.environment)}, {"warnings", created.warnings}}, 201);
    });
    server_.Patch(c + "/environments/([^/]+)", [&s](const Req& req, Res& res) {
      auto b = body(req);
      const json& d = b.contains("delta") ? b["delta"] : b;
      Delta delta{json_codec::detail::get_number(d, "dx", "delta"), json_codec::detail::get_number(d, "dy", "delta")};
      auto moved = s.move_environment(arg(req, 1), arg(req, 2), delta);
      auto canvas = s.canvas(arg(req, 1));
      json cells = json::array(), outputs = json::array();
      for (const auto& id : moved.moved_cells) {
        if (auto it = canvas.cells.find(id); it != canvas.cells.end()) cells.push_back(json_codec::to_json(it->second));
      }
      for (const auto& id : moved.moved_outputs) {
        if (auto it = canvas.outputs.find(id); it != canvas.outputs.end()) {
          outputs.push_back(json_codec::to_json(it->second));
        }
      }
      reply(res, {{"environment", json_codec::to_json(moved.environment)}, {"cells", cells}, {"outputs", outputs}});
    });
    server_.Delete(c + "/environments/([^/]+)", [&s](const Req& req, Res& res) {
      reply(res, {{"deleted", json_codec::to_json(s.delete_environment(arg(req, 1), arg(req, 2)))}});
    });

    server_.Post(c + "/outputs/([^/]+)/detach", [&s](const Req& req, Res& res) {
      reply(res, json_codec::to_json(s.detach_output(arg(req, 1), arg(req, 2))));
    });
    server_.Patch(c + "/outputs/([^/]+)", [&s](const Req& req, Res& res) {
      auto b = body(req);
      Point origin;
      if (b.contains("origin")) {
        origin = json_codec::point_from_json(b["origin"], "origin");
      } else if (b.contains("frame")) {
        auto frame = json_codec::rect_from_json(b["frame"], "frame");
        auto current = get_output(s.canvas(arg(req, 1)), arg(req, 2)).frame;
        if (frame.width != current.width || frame.height != current.height) {
          throw Error(ErrorCode::invalid_argument, "outputs can be moved but not resized");
        }
        origin = frame.origin;
      } else {
        throw Error(ErrorCode::invalid_argument, "give the new origin");
      }
      reply(res, json_codec::to_json(s.move_output(arg(req, 1), arg(req, 2), origin)));
    });
    server_.Delete(c + "/outputs/([^/]+)", [&s](const Req& req, Res& res) {
      s.delete_output(arg(req, 1), arg(req, 2));
      reply(res, {{"deleted", arg(req, 2)}});
    });

    server_.Get(c + "/file", [&s](const Req& req, Res& res) {
      res.set_content(s.file_bytes(arg(req, 1)), "application/json");
    });
    server_.Put(c + "/file", [&s](const Req& req, Res& res) {
      reply(res, json_codec::to_json(s.replace_file(arg(req, 1), req.body)));
    });
    server_.Get(c + "/export/ipynb", [&s](const Req& req, Res& res) {
      auto exported = s.export_ipynb(arg(req, 1));
      res.set_header("X-Canvas-Warnings", json(exported.warnings).dump());
      res.set_content(exported.notebook.dump(1), "application/x-ipynb+json");
    });

    server_.Post(c + "/agent/tasks", [&s](const Req& req, Res& res) {
      reply(res, to_json(s.run_agent(arg(req, 1), agent_task_from_json(body(req)))));
    });

    server_.Get(c + "/events", [this, &s](const Req& req, Res& res) {
      auto sub = s.subscribe(arg(req, 1));
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [this, sub](std::size_t, httplib::DataSink& sink) {
        return pump(*sub, sink);
      }, [sub](bool) { sub->close(); });
    });
  }

  /// Writes whatever is queued, or a keep-alive comment after a quiet
  /// second so dead clients are noticed. Returning false drops the stream.
  bool pump(Subscription& sub, httplib::DataSink& sink) {
    if (stopping_) {
      sink.done();
      return true;
    }
    auto e = sub.pop(std::chrono::milliseconds(1000));
    std::string chunk;
    if (e) {
      chunk = "data: " + to_json(*e).dump() + "\n\n";
    } else if (sub.closed()) {
      sink.done();
      return true;
    } else {
      chunk = ": keep-alive\n\n";
    }
    return sink.write(chunk.data(), chunk.size());
  }

  Service& service_;
  httplib::Server server_;
  std::thread thread_;
  std::atomic<bool> stopping_{false};
  int port_ = -1;
};

}  // namespace ccanvas
