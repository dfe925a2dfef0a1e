// Drives the reference Python worker through the C++ session layer.
#include <gtest/gtest.h>
#include <sys/wait.h>

#include "ccanvas/session.hpp"

using namespace ccanvas;
using namespace std::chrono_literals;
using nlohmann::json;

namespace {

std::shared_ptr<Session> start(const std::string& id = "main") {
  return Session::start(id, "c", std::nullopt, default_worker_command());
}

ExecOutcome run(Session& s, const std::string& code) { return s.submit_execute(code).get(); }

std::string repr(Session& s, const std::string& code) {
  auto o = run(s, code);
  EXPECT_TRUE(o.ok) << code << ": " << (o.reply.error ? o.reply.error->message : "");
  return o.reply.result_repr.value_or("<none>");
}

int exit_code(ChildProcess& p) {
  EXPECT_TRUE(p.wait_for_exit(10s));
  auto st = p.exit_status();
  if (!st || !WIFEXITED(*st)) return -1;
  return WEXITSTATUS(*st);
}

}  // namespace

TEST(Worker, ExpressionResultAndStreams) {
  auto s = start();
  EXPECT_EQ(repr(*s, "1+1"), "2");
  auto o = run(*s, "import sys\nprint('out')\nprint('err', file=sys.stderr)\nx = 5");
  EXPECT_TRUE(o.ok);
  EXPECT_EQ(o.reply.stdout_text, "out\n");
  EXPECT_EQ(o.reply.stderr_text, "err\n");
  EXPECT_FALSE(o.reply.result_repr);
  EXPECT_EQ(repr(*s, "x"), "5");
  // A trailing None expression has no result, and strings keep their quotes.
  EXPECT_FALSE(run(*s, "None").reply.result_repr);
  EXPECT_EQ(repr(*s, "'a' + 'b'"), "'ab'");
  EXPECT_EQ(o.execution_count, 2);
}

TEST(Worker, ErrorsKeepEarlierBindings) {
  auto s = start();
  auto o = run(*s, "y = 3\nz = 1/0\nw = 4");
  EXPECT_FALSE(o.ok);
  ASSERT_TRUE(o.reply.error);
  EXPECT_EQ(o.reply.error->etype, "ZeroDivisionError");
  EXPECT_NE(o.reply.error->traceback.find("ZeroDivisionError"), std::string::npos);
  EXPECT_EQ(repr(*s, "y"), "3");
  EXPECT_EQ(run(*s, "w").reply.error->etype, "NameError");
  EXPECT_EQ(run(*s, "def f(:\n  pass").reply.error->etype, "SyntaxError");
  // SystemExit and input() must not take the worker down.
  EXPECT_FALSE(run(*s, "raise SystemExit(3)").ok);
  EXPECT_FALSE(run(*s, "input()").ok);
  EXPECT_EQ(repr(*s, "y + 1"), "4");
  EXPECT_EQ(s->state(), SessionState::idle);
}

TEST(Worker, StrayFdWritesDoNotCorruptFrames) {
  auto s = start();
  auto o = run(*s, "import os\nos.write(1, b'garbage\\n')\n7");
  EXPECT_TRUE(o.ok);
  EXPECT_EQ(repr(*s, "6*7"), "42");
}

TEST(Worker, RichDisplay) {
  auto s = start();
  auto o = run(*s,
               "canvas_display('image/png', b'\\x89PNG')\n"
               "canvas_display('application/json', {'a': [1, 2]})\n"
               "canvas_display('text/html', '<b>x</b>')\n");
  ASSERT_TRUE(o.ok);
  ASSERT_EQ(o.reply.rich.size(), 3u);
  EXPECT_EQ(o.reply.rich[0].mime, "image/png");
  EXPECT_EQ(o.reply.rich[0].data, "iVBORw==");
  EXPECT_EQ(json::parse(o.reply.rich[1].data), json::parse(R"({"a":[1,2]})"));
  EXPECT_EQ(o.reply.rich[2].data, "<b>x</b>");
}

TEST(Worker, SnapshotRestoreCarriesState) {
  auto a = start("main");
  run(*a, "import math as m\nxs = [1, 2]\nys = xs\nf = lambda: 1\nn = 10");
  auto snap = a->submit_snapshot().get();
  EXPECT_EQ(snap.skipped, std::vector<std::string>{"f"});

  auto b = start("fork-1");
  EXPECT_TRUE(b->submit_restore(snap.blob).get().empty());
  EXPECT_EQ(repr(*b, "n"), "10");
  EXPECT_EQ(repr(*b, "round(m.pi, 2)"), "3.14");
  // Aliasing survives the copy.
  EXPECT_EQ(repr(*b, "ys.append(3)\nxs"), "[1, 2, 3]");
  EXPECT_EQ(run(*b, "f").reply.error->etype, "NameError");
  EXPECT_EQ(repr(*b, "canvas_display is not None"), "True");
  // And the source worker is untouched.
  EXPECT_EQ(repr(*a, "xs"), "[1, 2]");
}

TEST(Worker, CorruptBlobLeavesNamespaceIntact) {
  auto s = start();
  run(*s, "keep = 1");
  try {
    s->submit_restore("not base64 at all!").get();
    FAIL() << "restore should fail";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::fork_failed);
  }
  EXPECT_EQ(repr(*s, "keep"), "1");
}

TEST(Worker, HandleReportsCounterAndPid) {
  auto s = start();
  auto h = s->handle();
  EXPECT_EQ(h.exec_counter, 1);
  EXPECT_GT(h.pid, 0);
  run(*s, "1");
  EXPECT_EQ(s->handle().exec_counter, 2);
  s->terminate();
  EXPECT_EQ(s->state(), SessionState::dead);
  try {
    run(*s, "1");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::environment_terminated);
  }
}

TEST(Worker, BadCommandFailsToStart) {
  WorkerCommand bad{{"/bin/sh", "-c", "echo nope"}, 2000ms};
  try {
    Session::start("main", "c", std::nullopt, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::spawn_failed);
  }
  WorkerCommand mismatch{{"/bin/sh", "-c", "echo '{\"ready\":\"9\"}'; sleep 5"}, 2000ms};
  try {
    Session::start("main", "c", std::nullopt, mismatch);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::spawn_failed);
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(WorkerExit, ShutdownIsZero) {
  auto p = ChildProcess::spawn(default_worker_command().argv);
  WorkerChannel ch(p.channel());
  ch.handshake();
  EXPECT_TRUE(ch.call(protocol::Op::ping).ok);
  EXPECT_TRUE(ch.call(protocol::Op::shutdown).ok);
  EXPECT_EQ(exit_code(p), 0);
}

TEST(WorkerExit, EofIsOne) {
  auto p = ChildProcess::spawn(default_worker_command().argv);
  WorkerChannel ch(p.channel());
  ch.handshake();
  p.close_channel();
  EXPECT_EQ(exit_code(p), 1);
}

TEST(WorkerExit, ProtocolViolationIsTwo) {
  auto p = ChildProcess::spawn(default_worker_command().argv);
  protocol::LineReader reader(p.channel());
  protocol::handshake(reader);
  // Same id twice: ids must strictly increase.
  protocol::write_all(p.channel(), "{\"id\":1,\"op\":\"ping\",\"payload\":{}}\n");
  EXPECT_TRUE(reader.read_line(5s));
  protocol::write_all(p.channel(), "{\"id\":1,\"op\":\"ping\",\"payload\":{}}\n");
  EXPECT_EQ(exit_code(p), 2);

  auto q = ChildProcess::spawn(default_worker_command().argv);
  protocol::LineReader qr(q.channel());
  protocol::handshake(qr);
  protocol::write_all(q.channel(), "not json\n");
  EXPECT_EQ(exit_code(q), 2);
}
