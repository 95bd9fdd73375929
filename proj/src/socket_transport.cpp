#include "efedsim/socket_transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>
#include <string>

namespace efedsim::fed {

namespace {

[[noreturn]] void fail(const char* what) {
  throw std::runtime_error(std::string("loopback transport: ") + what + ": " + std::strerror(errno));
}

// Connected (sender, receiver) pair over 127.0.0.1, or {-1, -1}.
std::pair<int, int> tcp_pair() {
  const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listener < 0) return {-1, -1};
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  socklen_t len = sizeof(addr);
  int sender = -1;
  int receiver = -1;
  if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0 && ::listen(listener, 1) == 0 &&
      ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len) == 0) {
    sender = ::socket(AF_INET, SOCK_STREAM, 0);
    if (sender >= 0 && ::connect(sender, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) {
      receiver = ::accept(listener, nullptr, nullptr);
    }
  }
  ::close(listener);
  if (receiver < 0) {
    if (sender >= 0) ::close(sender);
    return {-1, -1};
  }
  const int one = 1;
  ::setsockopt(sender, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return {sender, receiver};
}

}  // namespace

LoopbackSocketTransport::LoopbackSocketTransport() {
  auto [s, r] = tcp_pair();
  tcp_ = s >= 0;
  if (!tcp_) {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) fail("socketpair");
    s = fds[0];
    r = fds[1];
  }
  send_fd_ = s;
  recv_fd_ = r;
  reader_ = std::thread([this] { read_loop(); });
}

LoopbackSocketTransport::~LoopbackSocketTransport() {
  ::shutdown(send_fd_, SHUT_WR);
  reader_.join();
  ::close(send_fd_);
  ::close(recv_fd_);
}

void LoopbackSocketTransport::read_loop() {
  wire::FrameReader reader;
  std::uint8_t buf[1 << 16];
  try {
    while (true) {
      const ssize_t got = ::recv(recv_fd_, buf, sizeof(buf), 0);
      if (got < 0 && errno == EINTR) continue;
      if (got < 0) fail("recv");
      if (got == 0) break;
      reader.feed({buf, static_cast<std::size_t>(got)});
      while (auto msg = reader.next()) {
        std::lock_guard lock(mu_);
        inbox_.push_back(std::move(*msg));
        ready_.notify_all();
      }
    }
  } catch (...) {
    std::lock_guard lock(mu_);
    error_ = std::current_exception();
  }
  std::lock_guard lock(mu_);
  closed_ = true;
  ready_.notify_all();
}

Message LoopbackSocketTransport::transmit(const wire::Bytes& frame) {
  std::size_t sent = 0;
  while (sent < frame.size()) {
    const ssize_t n = ::send(send_fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n < 0) fail("send");
    sent += static_cast<std::size_t>(n);
  }
  std::unique_lock lock(mu_);
  ready_.wait(lock, [this] { return !inbox_.empty() || closed_; });
  if (inbox_.empty()) {
    if (error_) std::rethrow_exception(error_);
    throw std::runtime_error("loopback transport: connection closed");
  }
  Message msg = std::move(inbox_.front());
  inbox_.pop_front();
  return msg;
}

}  // namespace efedsim::fed
