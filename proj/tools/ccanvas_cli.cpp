// ccanvas: serve a workspace, convert between .2dntb and .ipynb, run a
// canvas headlessly, or validate a file.

#include <signal.h>

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "ccanvas/cli.hpp"
#include "ccanvas/http_server.hpp"

namespace {

int serve(const std::string& workspace, const std::string& bind, int port, const ccanvas::WorkerCommand& worker) {
  std::error_code ec;
  if (!std::filesystem::is_directory(workspace, ec)) {
    std::cerr << "error: workspace '" << workspace << "' is not a directory\n";
    return ccanvas::cli::exit_failure;
  }
  // Block the stop signals before any thread starts so only sigwait sees them.
  sigset_t stop;
  sigemptyset(&stop);
  sigaddset(&stop, SIGINT);
  sigaddset(&stop, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop, nullptr);
  try {
    ccanvas::ServiceOptions options;
    options.workspace = workspace;
    options.worker = worker;
    ccanvas::Service service(options);
    ccanvas::HttpServer server(service);
    const int bound = server.start(bind, port);
    std::cerr << "ccanvas: serving " << workspace << " on http://" << bind << ":" << bound << std::endl;
    int sig = 0;
    sigwait(&stop, &sig);
    std::cerr << "ccanvas: shutting down" << std::endl;
    server.stop();
    service.flush();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ccanvas::cli::exit_failure;
  }
  return ccanvas::cli::exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"2D computational canvas: server and batch tools"};
  app.require_subcommand(1);

  std::string worker_line;
  app.add_option("--worker", worker_line, "interpreter worker command (default: $CCANVAS_WORKER or built-in)");

  auto* serve_cmd = app.add_subcommand("serve", "serve a workspace of .2dntb files over HTTP");
  int port = 8787;
  std::string workspace, bind = "127.0.0.1";
  serve_cmd->add_option("--port", port, "TCP port")->capture_default_str();
  serve_cmd->add_option("--workspace", workspace, "directory holding .2dntb files")->required();
  serve_cmd->add_option("--bind", bind, "listen address")->capture_default_str();

  auto* convert_cmd = app.add_subcommand("convert", "convert .2dntb <-> .ipynb (direction from the extensions)");
  std::string in, out;
  convert_cmd->add_option("IN", in)->required();
  convert_cmd->add_option("OUT", out)->required();

  auto* run_cmd = app.add_subcommand("run", "execute every code cell in creation order");
  std::string run_file;
  bool save = false, run_json = false;
  run_cmd->add_option("FILE", run_file)->required();
  run_cmd->add_flag("--save", save, "write outputs back into FILE");
  run_cmd->add_flag("--json", run_json, "machine-readable report");

  auto* validate_cmd = app.add_subcommand("validate", "check a .2dntb file");
  std::string validate_file;
  bool validate_json = false;
  validate_cmd->add_option("FILE", validate_file)->required();
  validate_cmd->add_flag("--json", validate_json, "machine-readable report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : ccanvas::cli::exit_failure;
  }

  ccanvas::WorkerCommand worker;
  try {
    worker = worker_line.empty() ? ccanvas::default_worker_command() : ccanvas::parse_worker_command(worker_line);
  } catch (const ccanvas::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ccanvas::cli::exit_failure;
  }

  if (*serve_cmd) return serve(workspace, bind, port, worker);
  if (*convert_cmd) return ccanvas::cli::convert(in, out, std::cerr);
  if (*run_cmd) return ccanvas::cli::run(run_file, {save, run_json, worker}, std::cout, std::cerr);
  return ccanvas::cli::validate(validate_file, validate_json, std::cout, std::cerr);
}
