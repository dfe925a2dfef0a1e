#pragma once

#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ccanvas/error.hpp"

extern char** environ;

namespace ccanvas {

/// Owning file descriptor.
class UniqueFd {
 public:
  UniqueFd() = default;
  explicit UniqueFd(int fd) : fd_(fd) {}
  UniqueFd(UniqueFd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  UniqueFd& operator=(UniqueFd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  UniqueFd(const UniqueFd&) = delete;
  UniqueFd& operator=(const UniqueFd&) = delete;
  ~UniqueFd() { reset(); }

  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

/// A connected pair of stream sockets, close-on-exec on both ends.
inline std::pair<UniqueFd, UniqueFd> make_socket_pair() {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) {
    throw Error(ErrorCode::spawn_failed, std::string("socketpair failed: ") + std::strerror(errno));
  }
  return {UniqueFd(fds[0]), UniqueFd(fds[1])};
}

/// A child process whose stdin and stdout are both wired to one end of a
/// socket pair; the parent keeps the other end. stderr is inherited.
class ChildProcess {
 public:
  ChildProcess() = default;
  ChildProcess(ChildProcess&& o) noexcept
      : pid_(std::exchange(o.pid_, -1)), channel_(std::move(o.channel_)), status_(o.status_) {}
  ChildProcess& operator=(ChildProcess&& o) noexcept {
    if (this != &o) {
      reap_or_kill();
      pid_ = std::exchange(o.pid_, -1);
      channel_ = std::move(o.channel_);
      status_ = o.status_;
    }
    return *this;
  }
  ~ChildProcess() { reap_or_kill(); }

  static ChildProcess spawn(const std::vector<std::string>& argv) {
    if (argv.empty()) throw Error(ErrorCode::spawn_failed, "empty worker command");
    auto [parent_end, child_end] = make_socket_pair();

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, child_end.get(), STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, child_end.get(), STDOUT_FILENO);

    posix_spawnattr_t attr;
    posix_spawnattr_init(&attr);
    sigset_t defaults;
    sigemptyset(&defaults);
    sigaddset(&defaults, SIGPIPE);
    posix_spawnattr_setsigdefault(&attr, &defaults);
    posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETSIGDEF);

    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);

    pid_t pid = -1;
    int rc = ::posix_spawnp(&pid, args[0], &actions, &attr, args.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    posix_spawnattr_destroy(&attr);
    if (rc != 0) {
      throw Error(ErrorCode::spawn_failed, "cannot start '" + argv[0] + "': " + std::strerror(rc));
    }
    ChildProcess child;
    child.pid_ = pid;
    child.channel_ = std::move(parent_end);
    return child;
  }

  pid_t pid() const noexcept { return pid_; }
  int channel() const noexcept { return channel_.get(); }
  void close_channel() noexcept { channel_.reset(); }

  bool running() {
    poll_exit();
    return pid_ > 0 && !status_;
  }

  std::optional<int> exit_status() {
    poll_exit();
    return status_;
  }

  /// True if the process exited within the grace period.
  bool wait_for_exit(std::chrono::milliseconds grace) {
    const auto deadline = std::chrono::steady_clock::now() + grace;
    while (running()) {
      if (std::chrono::steady_clock::now() >= deadline) return false;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return true;
  }

  void kill() {
    if (running()) {
      ::kill(pid_, SIGKILL);
      int status = 0;
      while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
      }
      status_ = status;
    }
  }

 private:
  void poll_exit() {
    if (pid_ <= 0 || status_) return;
    int status = 0;
    pid_t r = ::waitpid(pid_, &status, WNOHANG);
    if (r == pid_) status_ = status;
    else if (r < 0 && errno == ECHILD) status_ = -1;
  }

  void reap_or_kill() noexcept {
    if (pid_ <= 0) return;
    try {
      kill();
    } catch (...) {
    }
    pid_ = -1;
  }

  pid_t pid_ = -1;
  UniqueFd channel_;
  std::optional<int> status_;
};

}  // namespace ccanvas
