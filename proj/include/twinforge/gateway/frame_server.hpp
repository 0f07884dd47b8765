#pragma once

#include <atomic>
#include <cstdint>
#include <list>
#include <mutex>
#include <string>
#include <thread>

#include "twinforge/gateway/gateway.hpp"

namespace twinforge::gateway {

// Device intake over TCP. Each frame is a 4-byte big-endian length followed
// by UTF-8 JSON {tenant, device, username, password, payload[, headers]};
// every request frame is answered with one response frame
// {"ok":true,"offset":n} or {"ok":false,"error":<code>,"message":...}.
class FrameServer {
 public:
  static constexpr std::uint32_t kMaxFrame = 16u << 20;

  explicit FrameServer(Gateway& gateway, std::string host = "127.0.0.1", std::uint16_t port = 0);
  ~FrameServer();
  FrameServer(const FrameServer&) = delete;
  FrameServer& operator=(const FrameServer&) = delete;

  void start();
  void stop();
  std::uint16_t port() const noexcept { return port_; }

  // Handles one decoded request; exposed for tests.
  Json handle(const Json& request);

 private:
  void accept_loop();
  void serve(int fd);

  Gateway& gateway_;
  std::string host_;
  std::uint16_t port_;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::list<std::pair<int, std::thread>> connections_;
};

// Blocking client for the frame protocol.
class FrameClient {
 public:
  FrameClient(const std::string& host, std::uint16_t port);
  ~FrameClient();
  FrameClient(const FrameClient&) = delete;
  FrameClient& operator=(const FrameClient&) = delete;

  Json call(const Json& request);

 private:
  int fd_ = -1;
};

// Socket helpers shared by server and client. Throw Error(IoError).
void write_frame(int fd, std::string_view body);
// False on orderly close before a length prefix.
bool read_frame(int fd, std::string& body);

}  // namespace twinforge::gateway
