#include <gtest/gtest.h>
#include <sys/socket.h>

#include <thread>

#include "ccanvas/process.hpp"
#include "ccanvas/worker_channel.hpp"

using namespace ccanvas;
using namespace ccanvas::protocol;
using nlohmann::json;

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

}  // namespace

TEST(Protocol, PingFrameBytes) {
  EXPECT_EQ(encode_frame(Request{1, Op::ping, json::object()}), "{\"id\":1,\"op\":\"ping\",\"payload\":{}}\n");
}

TEST(Protocol, FramesRoundTrip) {
  Request req{7, Op::execute, {{"code", "print('a\\nb')\n"}}};
  auto bytes = encode_frame(req);
  EXPECT_EQ(std::count(bytes.begin(), bytes.end(), '\n'), 1);
  EXPECT_EQ(bytes.back(), '\n');
  EXPECT_EQ(decode_frame<Request>(bytes), req);
  Response resp{7, false, {{"error", {{"etype", "E"}, {"message", "m"}, {"traceback", ""}}}}};
  EXPECT_EQ(decode_frame<Response>(encode_frame(resp)), resp);
}

TEST(Protocol, RejectsBadFrames) {
  EXPECT_EQ(code_of([] { decode_frame<Request>("{\"id\":1,"); }), ErrorCode::malformed_json);
  EXPECT_EQ(code_of([] { decode_frame<Request>("[1]\n"); }), ErrorCode::schema_violation);
  EXPECT_EQ(code_of([] { decode_frame<Request>(R"({"id":0,"op":"ping","payload":{}})"); }), ErrorCode::schema_violation);
  EXPECT_EQ(code_of([] { decode_frame<Request>(R"({"id":1,"op":"fly","payload":{}})"); }), ErrorCode::schema_violation);
  EXPECT_EQ(code_of([] { decode_frame<Request>(R"({"id":1,"op":"execute","payload":{}})"); }),
            ErrorCode::schema_violation);
  EXPECT_EQ(code_of([] { decode_frame<Response>(R"({"id":1,"ok":"yes","payload":{}})"); }),
            ErrorCode::schema_violation);
  EXPECT_EQ(code_of([] { encode_frame(Request{1, Op::restore, json::object()}); }), ErrorCode::schema_violation);
}

TEST(Protocol, OversizeFrameRejected) {
  // 65 MiB of payload inside an otherwise valid frame.
  std::string big = R"({"id":1,"ok":true,"payload":{"blob":")" + std::string(65u << 20, 'A') + "\"}}\n";
  EXPECT_EQ(code_of([&] { decode_frame<Response>(big); }), ErrorCode::frame_too_large);
}

TEST(Protocol, OversizeLineRejectedByReader) {
  auto [a, b] = make_socket_pair();
  std::thread writer([fd = b.get()] {
    std::string chunk(1 << 20, 'x');
    try {
      for (int i = 0; i < 70; ++i) write_all(fd, chunk);
    } catch (const Error&) {
    }
  });
  LineReader reader(a.get());
  EXPECT_EQ(code_of([&] { reader.read_line(std::chrono::milliseconds(20000)); }), ErrorCode::frame_too_large);
  a.reset();
  writer.join();
}

TEST(Protocol, ReplyPayloadViews) {
  auto reply = parse_execute_reply({{"stdout", "o"},
                                    {"stderr", ""},
                                    {"result_repr", "2"},
                                    {"rich", {{{"mime", "text/plain"}, {"data", "x"}}}},
                                    {"error", nullptr}});
  EXPECT_EQ(reply.stdout_text, "o");
  EXPECT_EQ(reply.result_repr, "2");
  ASSERT_EQ(reply.rich.size(), 1u);
  EXPECT_FALSE(reply.error);
  auto snap = parse_snapshot_reply({{"blob", "QUJD"}, {"skipped", {"f"}}});
  EXPECT_EQ(snap.blob, "QUJD");
  EXPECT_EQ(snap.skipped, std::vector<std::string>{"f"});
}

namespace {

/// Runs `script` against the far end of a socket pair, as a stand-in worker.
struct FakeWorker {
  explicit FakeWorker(std::function<void(int)> script) {
    auto [a, b] = make_socket_pair();
    client = std::move(a);
    server = std::move(b);
    thread = std::thread([fd = server.get(), script = std::move(script)] { script(fd); });
  }
  ~FakeWorker() {
    if (thread.joinable()) thread.join();
  }
  UniqueFd client, server;
  std::thread thread;
};

}  // namespace

TEST(Protocol, HandshakeOutcomes) {
  {
    FakeWorker w([](int fd) { write_all(fd, "{\"ready\":\"1\"}\n"); });
    LineReader r(w.client.get());
    EXPECT_EQ(handshake(r), "1");
  }
  {
    FakeWorker w([](int fd) { write_all(fd, "{\"ready\":\"2\"}\n"); });
    LineReader r(w.client.get());
    EXPECT_EQ(code_of([&] { handshake(r); }), ErrorCode::version_mismatch);
  }
  {
    FakeWorker w([](int fd) { write_all(fd, "Python 3.10 banner\n"); });
    LineReader r(w.client.get());
    EXPECT_EQ(code_of([&] { handshake(r); }), ErrorCode::protocol_error);
  }
  {
    FakeWorker w([](int) {});
    LineReader r(w.client.get());
    EXPECT_EQ(code_of([&] { handshake(r, std::chrono::milliseconds(100)); }), ErrorCode::handshake_timeout);
  }
  {
    FakeWorker w([](int) {});
    w.thread.join();
    w.server.reset();
    LineReader r(w.client.get());
    EXPECT_EQ(code_of([&] { handshake(r); }), ErrorCode::protocol_error);
  }
}

TEST(Protocol, PipelinedRequestsPairInOrder) {
  FakeWorker w([](int fd) {
    write_all(fd, "{\"ready\":\"1\"}\n");
    LineReader in(fd);
    // Read all three before answering any, then answer in request order.
    std::vector<Request> reqs;
    for (int i = 0; i < 3; ++i) reqs.push_back(decode_frame<Request>(*in.read_line()));
    for (const auto& r : reqs) write_all(fd, encode_frame(Response{r.id, true, {{"echo", r.payload}}}));
  });
  WorkerChannel ch(w.client.get());
  ch.handshake();
  std::vector<std::uint64_t> ids;
  for (int i = 0; i < 3; ++i) ids.push_back(ch.send(Op::execute, {{"code", std::to_string(i)}}));
  EXPECT_EQ(ids, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(ch.outstanding(), 3u);
  for (int i = 0; i < 3; ++i) {
    auto resp = ch.receive(std::chrono::milliseconds(5000));
    EXPECT_EQ(resp.id, ids[static_cast<std::size_t>(i)]);
    EXPECT_EQ(resp.payload["echo"]["code"], std::to_string(i));
  }
  EXPECT_EQ(ch.outstanding(), 0u);
}

TEST(Protocol, OutOfOrderResponseIsProtocolError) {
  FakeWorker w([](int fd) {
    write_all(fd, "{\"ready\":\"1\"}\n");
    LineReader in(fd);
    in.read_line();
    in.read_line();
    write_all(fd, encode_frame(Response{2, true, json::object()}));
  });
  WorkerChannel ch(w.client.get());
  ch.handshake();
  ch.send(Op::ping);
  ch.send(Op::ping);
  EXPECT_EQ(code_of([&] { ch.receive(std::chrono::milliseconds(5000)); }), ErrorCode::protocol_error);
}

TEST(Protocol, ClosedChannelIsWorkerFailure) {
  FakeWorker w([](int fd) { write_all(fd, "{\"ready\":\"1\"}\n"); });
  WorkerChannel ch(w.client.get());
  ch.handshake();
  w.thread.join();
  w.server.reset();
  EXPECT_EQ(code_of([&] { ch.receive(std::chrono::milliseconds(5000)); }), ErrorCode::worker_failure);
}

TEST(Process, SpawnFailureIsReported) {
  EXPECT_EQ(code_of([] { ChildProcess::spawn({"/nonexistent/ccanvas-worker"}); }), ErrorCode::spawn_failed);
}
