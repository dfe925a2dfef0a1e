#pragma once

// Batch entry points behind the ccanvas command line: convert, run and
// validate. Each returns the process exit code and writes human output to
// the given streams.

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "ccanvas/format_ipynb.hpp"
#include "ccanvas/orchestrator.hpp"
#include "ccanvas/workspace.hpp"

namespace ccanvas::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_failure = 1;
inline constexpr int exit_cell_errors = 2;

namespace fs = std::filesystem;

inline int convert(const fs::path& in, const fs::path& out, std::ostream& err) {
  const auto from = in.extension().string(), to = out.extension().string();
  const bool to_ipynb = from == ".2dntb" && to == ".ipynb";
  const bool to_canvas = from == ".ipynb" && to == ".2dntb";
  if (!to_ipynb && !to_canvas) {
    err << "usage: convert needs one .2dntb and one .ipynb path (got '" << from << "' -> '" << to << "')\n";
    return exit_failure;
  }
  try {
    const auto bytes = read_file(in);
    if (to_ipynb) {
      auto exported = export_ipynb(parse_2dntb(bytes, in.stem().string()));
      for (const auto& w : exported.warnings) err << "warning: " << w << "\n";
      atomic_write(out, exported.notebook.dump(1) + "\n");
    } else {
      auto notebook = nlohmann::json::parse(bytes, nullptr, false);
      if (notebook.is_discarded()) throw Error(ErrorCode::malformed_json, in.string() + " is not valid JSON");
      auto imported = import_ipynb(notebook, out.stem().string());
      for (const auto& w : imported.warnings) err << "warning: " << w << "\n";
      atomic_write(out, serialize_2dntb(imported.canvas));
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_failure;
  }
  return exit_ok;
}

struct RunOptions {
  bool save = false;
  bool json = false;
  WorkerCommand worker = default_worker_command();
};

struct CellRun {
  std::string cell_id;
  std::optional<ExecutionResult> result;
  std::string failure;  // set when the execution could not run at all
};

/// Executes every code cell in creation order, routing each one by where
/// it sits now. An environment's session is forked from main the first
/// time one of its cells runs.
inline std::vector<CellRun> run_canvas(Orchestrator& orchestrator, Document& doc) {
  auto order = doc.read([](const Canvas& c) {
    std::vector<const Cell*> cells;
    for (const auto& [_, cell] : c.cells) {
      if (cell.is_code()) cells.push_back(&cell);
    }
    std::sort(cells.begin(), cells.end(), [](auto* a, auto* b) { return a->created_seq < b->created_seq; });
    std::vector<std::string> ids;
    for (auto* cell : cells) ids.push_back(cell->id);
    return ids;
  });
  std::vector<CellRun> runs;
  for (const auto& id : order) {
    CellRun run{id, std::nullopt, {}};
    try {
      run.result = orchestrator.execute_cell(doc.id(), id);
    } catch (const std::exception& e) {
      run.failure = e.what();
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

inline std::string first_line(const Bundle& bundle) {
  for (const auto& item : bundle) {
    if (item.mime == mime::image_png) return "<image/png>";
    auto line = item.data.substr(0, item.data.find('\n'));
    if (!line.empty()) return line.size() > 60 ? line.substr(0, 57) + "..." : line;
  }
  return "";
}

inline int run(const fs::path& file, const RunOptions& options, std::ostream& out, std::ostream& err) {
  std::shared_ptr<Document> doc;
  try {
    doc = std::make_shared<Document>(parse_2dntb(read_file(file), file.stem().string()));
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_failure;
  }
  Orchestrator orchestrator(OrchestratorOptions{options.worker});
  orchestrator.register_canvas(doc);
  doc->events().set_recorder([&err](const CanvasEvent& e) {
    if (e.kind == event_kind::session_warning) err << "warning: " << e.payload.value("message", "") << "\n";
  });
  const auto runs = run_canvas(orchestrator, *doc);

  bool clean = true;
  auto report = nlohmann::json::array();
  if (!options.json) {
    out << std::left << std::setw(14) << "CELL" << std::setw(10) << "SESSION" << std::setw(8) << "STATUS"
        << std::setw(6) << "COUNT" << "OUTPUT\n";
  }
  for (const auto& r : runs) {
    if (!r.result) {
      clean = false;
      if (options.json) report.push_back({{"cell_id", r.cell_id}, {"status", "failed"}, {"message", r.failure}});
      else out << std::setw(14) << r.cell_id << std::setw(10) << "-" << std::setw(8) << "failed" << std::setw(6) << "-"
               << r.failure << "\n";
      continue;
    }
    if (r.result->status != "ok") clean = false;
    if (options.json) report.push_back(to_json(*r.result));
    else out << std::setw(14) << r.cell_id << std::setw(10) << r.result->session_id << std::setw(8) << r.result->status
             << std::setw(6) << r.result->execution_count << first_line(r.result->bundle) << "\n";
  }
  if (options.json) out << nlohmann::json{{"ok", clean}, {"cells", report}}.dump(2) << "\n";

  if (options.save) {
    try {
      atomic_write(file, serialize_2dntb(doc->snapshot()));
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      return exit_failure;
    }
  }
  return clean ? exit_ok : exit_cell_errors;
}

inline int validate(const fs::path& file, bool json, std::ostream& out, std::ostream& err) {
  std::vector<std::string> problems;
  try {
    auto canvas = parse_2dntb_unchecked(read_file(file), file.stem().string());
    problems = check_invariants(canvas);
  } catch (const Error& e) {
    problems.push_back(std::string(to_string(e.code())) + ": " + e.what());
  }
  if (json) {
    out << nlohmann::json{{"ok", problems.empty()}, {"violations", problems}}.dump(2) << "\n";
  } else if (problems.empty()) {
    out << "OK\n";
  } else {
    for (const auto& p : problems) err << p << "\n";
  }
  return problems.empty() ? exit_ok : exit_failure;
}

}  // namespace ccanvas::cli
