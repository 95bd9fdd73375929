#pragma once

#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <thread>

#include "efedsim/federation.hpp"

namespace efedsim::fed {

/// Sends every frame over a loopback TCP connection (a Unix socket pair when
/// TCP is unavailable). A reader thread reassembles frames from the byte
/// stream and decodes them; transmit() blocks until its frame comes back
/// decoded, so delivery order is the send order.
class LoopbackSocketTransport final : public Transport {
 public:
  LoopbackSocketTransport();
  ~LoopbackSocketTransport() override;
  LoopbackSocketTransport(const LoopbackSocketTransport&) = delete;
  LoopbackSocketTransport& operator=(const LoopbackSocketTransport&) = delete;

  Message transmit(const wire::Bytes& frame) override;

  bool uses_tcp() const { return tcp_; }

 private:
  void read_loop();

  int send_fd_ = -1;
  int recv_fd_ = -1;
  bool tcp_ = false;
  std::mutex mu_;
  std::condition_variable ready_;
  std::deque<Message> inbox_;
  std::exception_ptr error_;
  bool closed_ = false;
  std::thread reader_;
};

}  // namespace efedsim::fed
