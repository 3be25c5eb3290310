#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "starstream/errors.hpp"
#include "starstream/predictor.hpp"

namespace starstream {

PipePredictor::PipePredictor(std::string command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {}

PipePredictor::~PipePredictor() { stop(); }

void PipePredictor::start() {
  int in_pair[2];
  int out_pair[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, in_pair) != 0) {
    throw ProtocolError(std::string("socketpair: ") + std::strerror(errno));
  }
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, out_pair) != 0) {
    ::close(in_pair[0]);
    ::close(in_pair[1]);
    throw ProtocolError(std::string("socketpair: ") + std::strerror(errno));
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {in_pair[0], in_pair[1], out_pair[0], out_pair[1]}) ::close(fd);
    throw ProtocolError(std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    // Own process group so that stop() also reaches anything the shell spawns.
    ::setpgid(0, 0);
    ::dup2(in_pair[1], STDIN_FILENO);
    ::dup2(out_pair[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(in_pair[1]);
  ::close(out_pair[1]);
  pid_ = pid;
  to_child_ = in_pair[0];
  from_child_ = out_pair[0];
  buffer_.clear();
}

void PipePredictor::stop() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    ::kill(-pid_, SIGKILL);
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
  }
  pid_ = -1;
  buffer_.clear();
}

std::string PipePredictor::read_line(std::chrono::steady_clock::time_point deadline) {
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw PredictorTimeout("predictor '" + command_ + "' timed out");
    pollfd pfd{from_child_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (ready < 0 && errno == EINTR) continue;
    if (ready < 0) throw ProtocolError(std::string("poll: ") + std::strerror(errno));
    if (ready == 0) continue;
    char chunk[4096];
    const ssize_t got = ::read(from_child_, chunk, sizeof chunk);
    if (got < 0 && errno == EINTR) continue;
    if (got <= 0) throw ProtocolError("predictor '" + command_ + "' closed its output");
    buffer_.append(chunk, static_cast<std::size_t>(got));
  }
}

PredictionResult PipePredictor::predict(const PredictionRequest& req) {
  validate(req);
  if (pid_ < 0) start();
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  const std::string line = encode_request(req) + "\n";
  std::size_t sent = 0;
  while (sent < line.size()) {
    const ssize_t n = ::send(to_child_, line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      stop();
      throw ProtocolError("predictor '" + command_ + "' is not accepting requests");
    }
    sent += static_cast<std::size_t>(n);
  }
  try {
    return decode_response(read_line(deadline), req.n);
  } catch (const PredictorTimeout&) {
    // A late answer would desynchronize the stream; restart on next use.
    stop();
    throw;
  } catch (const ProtocolError&) {
    if (pid_ > 0 && ::waitpid(pid_, nullptr, WNOHANG) != 0) {
      pid_ = -1;
      stop();
    }
    throw;
  }
}

}  // namespace starstream
