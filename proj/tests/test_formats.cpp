#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <random>

#include "ccanvas/format_2dntb.hpp"
#include "ccanvas/format_ipynb.hpp"
#include "ccanvas/workspace.hpp"
#include "support/test_support.hpp"

using namespace ccanvas;
using nlohmann::json;
using testing_support::random_canvas;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::io_error;
}

// A real 1x1 transparent PNG.
const char* const tiny_png =
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mNkYPhfDwAChwGA60e6kgAAAABJRU5ErkJggg==";

/// Validates notebooks with the Python jsonschema package against the
/// schema file, independently of the C++ validator. Returns one verdict per
/// notebook.
std::vector<bool> python_schema_verdicts(const std::vector<json>& notebooks) {
  testing_support::TempDir dir;
  std::ofstream(dir / "in.json") << json(notebooks).dump();
  const std::string script =
      "import json,sys,jsonschema\n"
      "schema=json.load(open(sys.argv[1]))\n"
      "v=jsonschema.Draft4Validator(schema)\n"
      "print(''.join('1' if v.is_valid(n) else '0' for n in json.load(open(sys.argv[2]))))\n";
  std::ofstream(dir / "check.py") << script;
  const std::string cmd = std::string(CCANVAS_PYTHON) + " " + (dir / "check.py").string() + " " +
                          CCANVAS_TEST_DATA "/nbformat.v4.5.schema.json " + (dir / "in.json").string();
  FILE* p = ::popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  while (auto n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  EXPECT_EQ(::pclose(p), 0);
  std::vector<bool> verdicts;
  for (char ch : out) {
    if (ch == '0' || ch == '1') verdicts.push_back(ch == '1');
  }
  return verdicts;
}

Canvas sample_canvas() {
  auto c = make_canvas("sample", "Sample");
  auto a = create_cell(c, "x = 1\nprint(x)\n", {{0, 0}, 480, 80});
  auto b = create_cell(c, "# Notes", {{600, 0}, 300, 80});
  c.cells.at(b.id).metadata = {{"kind", "non-code"}, {"cell_type", "markdown"}};
  c.cells.at(a.id).execution_count = 3;
  auto out = attach_or_update_output(c, a.id, {{"stream/stdout", "1\n"}, {"text/plain", "1"}}, ProducedBy{"main", 3});
  detach_output(c, out.id);
  c.cells.at(a.id).execution_count = 4;
  attach_or_update_output(c, a.id, {{"image/png", tiny_png}, {"application/json", R"({"a":[1,2]})"}},
                          ProducedBy{"main", 4});
  create_environment(c, {{-100, -100}, 800, 400}, "#4D9DE0", "fork-1");
  return c;
}

}  // namespace

TEST(Format2dntb, CanonicalBytes) {
  auto c = make_canvas("k", "T");
  create_cell(c, "1+1", {{0, 0}, 10, 20});
  const std::string expected = R"({
  "canvas": {
    "cells": {
      "cell-0": {
        "created_seq": 0,
        "execution_count": null,
        "frame": {
          "height": 20.0,
          "width": 10.0,
          "x": 0.0,
          "y": 0.0
        },
        "id": "cell-0",
        "metadata": {},
        "source": "1+1"
      }
    },
    "environments": {},
    "format_version": "1.0",
    "id": "k",
    "next_output": 0,
    "next_seq": 1,
    "outputs": {},
    "title": "T"
  },
  "version": "1.0"
}
)";
  EXPECT_EQ(serialize_2dntb(c), expected);
}

TEST(Format2dntb, RoundTripRandomCanvases) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 300; ++i) {
    auto c = random_canvas(rng, "rt-" + std::to_string(i));
    auto bytes = serialize_2dntb(c);
    auto back = parse_2dntb(bytes);
    ASSERT_EQ(back, c) << bytes;
    ASSERT_EQ(serialize_2dntb(back), bytes);
  }
}

TEST(Format2dntb, EmptyInputYieldsFreshCanvas) {
  auto c = parse_2dntb("", "fresh");
  EXPECT_EQ(c, make_canvas("fresh"));
  EXPECT_EQ(parse_2dntb("  \n\t", "ws"), make_canvas("ws"));
}

TEST(Format2dntb, Errors) {
  EXPECT_EQ(code_of([] { parse_2dntb("{\"canvas\": "); }), ErrorCode::malformed_json);
  auto good = json::parse(serialize_2dntb(sample_canvas()));
  auto wrong_version = good;
  wrong_version["version"] = "2.0";
  EXPECT_EQ(code_of([&] { parse_2dntb(wrong_version.dump()); }), ErrorCode::unsupported_version);
  auto missing = good;
  missing["canvas"].erase("cells");
  EXPECT_EQ(code_of([&] { parse_2dntb(missing.dump()); }), ErrorCode::schema_violation);
  auto bad_type = good;
  bad_type["canvas"]["next_seq"] = "three";
  EXPECT_EQ(code_of([&] { parse_2dntb(bad_type.dump()); }), ErrorCode::schema_violation);
  auto inconsistent = good;
  inconsistent["canvas"]["next_seq"] = 0;
  EXPECT_EQ(code_of([&] { parse_2dntb(inconsistent.dump()); }), ErrorCode::invariant_violation);
  EXPECT_NO_THROW(parse_2dntb_unchecked(inconsistent.dump()));
}

TEST(FormatIpynb, ExportShape) {
  auto c = sample_canvas();
  auto exported = export_ipynb(c);
  const auto& nb = exported.notebook;
  EXPECT_TRUE(exported.warnings.empty());
  EXPECT_EQ(nb["nbformat"], 4);
  EXPECT_EQ(nb["nbformat_minor"], 5);
  ASSERT_EQ(nb["cells"].size(), 2u);
  const auto& code = nb["cells"][0];
  EXPECT_EQ(code["cell_type"], "code");
  EXPECT_EQ(code["source"], json({"x = 1\n", "print(x)\n"}));
  EXPECT_EQ(code["execution_count"], 4);
  // Attached output first: png and json as display_data; then the detached
  // one as display_data regardless of its original kind.
  const auto& outs = code["outputs"];
  ASSERT_EQ(outs.size(), 4u);
  EXPECT_EQ(outs[0]["output_type"], "display_data");
  EXPECT_EQ(outs[0]["data"]["image/png"], tiny_png);
  EXPECT_EQ(outs[1]["output_type"], "display_data");
  EXPECT_EQ(outs[1]["data"]["application/json"], json::parse(R"({"a":[1,2]})"));
  EXPECT_EQ(outs[2]["output_type"], "display_data");
  EXPECT_EQ(outs[3]["output_type"], "display_data");
  EXPECT_EQ(nb["cells"][1]["cell_type"], "markdown");
  EXPECT_TRUE(nbformat_schema().is_valid(nb));
}

TEST(FormatIpynb, AttachedOutputMapping) {
  auto c = make_canvas("m");
  auto cell = create_cell(c, "x", {{0, 0}, 10, 10});
  c.cells.at(cell.id).execution_count = 7;
  attach_or_update_output(c, cell.id, {{"stream/stdout", "out\n"}, {"stream/stderr", "err\n"}, {"text/plain", "42"}},
                          ProducedBy{"main", 7});
  auto outs = export_ipynb(c).notebook["cells"][0]["outputs"];
  ASSERT_EQ(outs.size(), 3u);
  EXPECT_EQ(outs[0], json({{"output_type", "stream"}, {"name", "stdout"}, {"text", {"out\n"}}}));
  EXPECT_EQ(outs[1], json({{"output_type", "stream"}, {"name", "stderr"}, {"text", {"err\n"}}}));
  EXPECT_EQ(outs[2]["output_type"], "execute_result");
  EXPECT_EQ(outs[2]["execution_count"], 7);
  EXPECT_EQ(outs[2]["data"]["text/plain"], json({"42"}));
}

TEST(FormatIpynb, OrphanDetachedOutputDroppedWithWarning) {
  auto c = make_canvas("o");
  auto cell = create_cell(c, "1", {{0, 0}, 10, 10});
  auto out = attach_or_update_output(c, cell.id, {{"text/plain", "1"}}, std::nullopt);
  detach_output(c, out.id);
  delete_cell(c, cell.id);
  auto exported = export_ipynb(c);
  ASSERT_EQ(exported.warnings.size(), 1u);
  EXPECT_NE(exported.warnings[0].find(out.id), std::string::npos);
  EXPECT_TRUE(exported.notebook["cells"].empty());
}

TEST(FormatIpynb, RoundTripRandomCanvases) {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 300; ++i) {
    auto c = random_canvas(rng, "nb-" + std::to_string(i), {40, false});
    auto exported = export_ipynb(c);
    ASSERT_TRUE(exported.warnings.empty());
    auto errors = nbformat_schema().validate(exported.notebook);
    ASSERT_TRUE(errors.empty()) << errors.front();
    // Through text, as a file would be.
    auto back = import_ipynb(json::parse(exported.notebook.dump(1)), "other");
    ASSERT_EQ(back.canvas, c) << exported.notebook.dump(1);
  }
}

TEST(FormatIpynb, ExportedNotebooksPassReferenceValidator) {
  std::mt19937_64 rng(23);
  std::vector<json> notebooks;
  for (int i = 0; i < 60; ++i) notebooks.push_back(export_ipynb(random_canvas(rng, "v")).notebook);
  auto verdicts = python_schema_verdicts(notebooks);
  ASSERT_EQ(verdicts.size(), notebooks.size());
  for (std::size_t i = 0; i < verdicts.size(); ++i) EXPECT_TRUE(verdicts[i]) << notebooks[i].dump(1);
}

TEST(FormatIpynb, SchemaValidatorAgreesWithReference) {
  // Differential check of the C++ validator on valid and corrupted notebooks.
  std::mt19937_64 rng(24);
  std::vector<json> samples;
  const std::vector<std::function<void(json&)>> corruptions = {
      [](json& nb) { nb.erase("metadata"); },
      [](json& nb) { nb["nbformat_minor"] = "5"; },
      [](json& nb) { nb["extra"] = 1; },
      [](json& nb) {
        if (!nb["cells"].empty()) nb["cells"][0]["id"] = "bad id!";
      },
      [](json& nb) {
        if (!nb["cells"].empty()) nb["cells"][0]["id"] = "ok-_id9";
      },
      [](json& nb) {
        if (!nb["cells"].empty()) nb["cells"][0].erase("source");
      },
      [](json& nb) {
        if (!nb["cells"].empty()) nb["cells"][0]["cell_type"] = "python";
      },
      [](json& nb) { nb["cells"].push_back({{"cell_type", "code"}, {"id", "q"}, {"metadata", json::object()}}); },
      [](json& nb) {
        nb["cells"].push_back({{"cell_type", "code"},
                               {"id", "z"},
                               {"metadata", json::object()},
                               {"source", ""},
                               {"execution_count", nullptr},
                               {"outputs", {{{"output_type", "stream"}, {"name", "stdout"}, {"text", 5}}}}});
      },
      [](json& nb) {
        nb["cells"].push_back({{"cell_type", "markdown"}, {"id", "m"}, {"metadata", json::object()}, {"source", {"a", "b"}}});
      },
      [](json&) {},
  };
  for (int i = 0; i < 120; ++i) {
    auto nb = export_ipynb(random_canvas(rng, "d", {12, false})).notebook;
    corruptions[static_cast<std::size_t>(i) % corruptions.size()](nb);
    samples.push_back(std::move(nb));
  }
  auto verdicts = python_schema_verdicts(samples);
  ASSERT_EQ(verdicts.size(), samples.size());
  int invalid = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(nbformat_schema().is_valid(samples[i]), verdicts[i]) << samples[i].dump(1);
    invalid += !verdicts[i];
  }
  EXPECT_GT(invalid, 30);
}

TEST(FormatIpynb, PlainNotebookColumnLayout) {
  json nb = {{"nbformat", 4},
             {"nbformat_minor", 4},
             {"metadata", json::object()},
             {"cells",
              {{{"cell_type", "markdown"}, {"metadata", json::object()}, {"source", "# Title"}},
               {{"cell_type", "code"},
                {"metadata", json::object()},
                {"source", {"x = 1\n", "x + 1"}},
                {"execution_count", 2},
                {"outputs",
                 {{{"output_type", "stream"}, {"name", "stdout"}, {"text", "hi\n"}},
                  {{"output_type", "execute_result"},
                   {"execution_count", 2},
                   {"metadata", json::object()},
                   {"data", {{"text/plain", "2"}, {"text/html", "<b>2</b>"}}}}}}},
               {{"cell_type", "code"},
                {"metadata", json::object()},
                {"source", "1/0"},
                {"execution_count", 3},
                {"outputs",
                 {{{"output_type", "error"},
                   {"ename", "ZeroDivisionError"},
                   {"evalue", "division by zero"},
                   {"traceback", {"Traceback", "ZeroDivisionError: division by zero"}}}}}}}}};
  auto imported = import_ipynb(nb, "plain");
  const auto& c = imported.canvas;
  EXPECT_EQ(c.id, "plain");
  ASSERT_EQ(c.cells.size(), 3u);
  std::vector<const Cell*> ordered;
  for (const auto& [_, cell] : c.cells) ordered.push_back(&cell);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->created_seq < b->created_seq; });
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(ordered[i]->frame, (Rect{{0, 136.0 * static_cast<double>(i)}, 480, 80}));
    EXPECT_EQ(ordered[i]->created_seq, i);
  }
  EXPECT_FALSE(ordered[0]->is_code());
  EXPECT_EQ(ordered[0]->metadata.at("cell_type"), "markdown");
  EXPECT_EQ(ordered[1]->source, "x = 1\nx + 1");
  EXPECT_EQ(ordered[1]->execution_count, 2);
  const auto* out = attached_output(c, ordered[1]->id);
  ASSERT_TRUE(out);
  EXPECT_EQ(out->frame, (Rect{{0, 136 + 80 + 16}, 480, 120}));
  EXPECT_EQ(out->bundle, (Bundle{{"stream/stdout", "hi\n"}, {"text/plain", "2"}}));
  const auto* err = attached_output(c, ordered[2]->id);
  ASSERT_TRUE(err);
  EXPECT_EQ(err->bundle, (Bundle{{"stream/stderr", "Traceback\nZeroDivisionError: division by zero\n"}}));
  EXPECT_TRUE(check_invariants(c).empty());
}

TEST(FormatIpynb, ImportErrors) {
  EXPECT_EQ(code_of([] { import_ipynb(json{{"nbformat", 3}, {"nbformat_minor", 0}, {"metadata", json::object()}, {"cells", json::array()}}); }),
            ErrorCode::unsupported_version);
  EXPECT_EQ(code_of([] { import_ipynb(json{{"nbformat", 4}, {"nbformat_minor", 5}, {"cells", json::array()}}); }),
            ErrorCode::schema_violation);
  EXPECT_EQ(code_of([] { import_ipynb(json::array()); }), ErrorCode::schema_violation);
}

TEST(FormatIpynb, TinyPngSurvivesBothFormats) {
  auto c = make_canvas("png");
  auto cell = create_cell(c, "img", {{0, 0}, 10, 10});
  attach_or_update_output(c, cell.id, {{"image/png", tiny_png}}, std::nullopt);
  auto via_nb = import_ipynb(export_ipynb(c).notebook).canvas;
  EXPECT_EQ(via_nb.outputs.begin()->second.bundle[0].data, tiny_png);
  auto via_file = parse_2dntb(serialize_2dntb(c));
  EXPECT_EQ(via_file.outputs.begin()->second.bundle[0].data, tiny_png);
  auto raw = base64::decode(tiny_png);
  ASSERT_TRUE(raw);
  EXPECT_EQ(raw->substr(1, 3), "PNG");
}

TEST(FormatIpynb, ExportOrderFollowsCreation) {
  std::mt19937_64 rng(25);
  for (int round = 0; round < 100; ++round) {
    auto c = make_canvas("order");
    std::uniform_int_distribution<int> n(1, 12);
    for (int i = 0, len = n(rng); i < len; ++i) create_cell(c, std::to_string(i), testing_support::random_rect(rng));
    // Cell i was created i-th and holds the text of i, wherever it sits.
    auto cells = export_ipynb(c).notebook["cells"];
    ASSERT_EQ(cells.size(), c.cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) ASSERT_EQ(cells[i]["source"], json({std::to_string(i)}));
  }
}

TEST(Workspace, AtomicWriteAndScan) {
  testing_support::TempDir dir;
  Workspace ws(dir.path());
  EXPECT_TRUE(ws.scan().empty());
  auto c = sample_canvas();
  c.id = "alpha";
  ws.save(c);
  std::ofstream(dir / "beta.2dntb");  // empty file: a fresh canvas
  std::ofstream(dir / "notes.txt") << "x";
  EXPECT_EQ(ws.scan(), (std::vector<std::string>{"alpha", "beta"}));
  EXPECT_EQ(ws.load("alpha"), c);
  EXPECT_EQ(ws.load("beta"), make_canvas("beta"));
  EXPECT_EQ(code_of([&] { ws.load("gamma"); }), ErrorCode::not_found);
  EXPECT_EQ(code_of([&] { ws.path_for("../escape"); }), ErrorCode::invalid_argument);
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
    EXPECT_EQ(e.path().string().find(".tmp-"), std::string::npos);
  }
}
