#include "twinforge/gateway/frame_server.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "twinforge/core/error.hpp"

namespace twinforge::gateway {

namespace {

[[noreturn]] void sys_fail(const std::string& what) {
  throw Error(Errc::IoError, what + ": " + std::strerror(errno));
}

void write_all(int fd, const char* p, std::size_t n) {
  while (n > 0) {
    const auto w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      sys_fail("send");
    }
    p += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Returns bytes read before EOF.
std::size_t read_all(int fd, char* p, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const auto r = ::recv(fd, p + got, n - got, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      sys_fail("recv");
    }
    if (r == 0) break;
    got += static_cast<std::size_t>(r);
  }
  return got;
}

Json error_reply(Errc code, const std::string& message) {
  return Json{{"ok", false}, {"error", std::string(to_string(code))}, {"message", message}};
}

}  // namespace

void write_frame(int fd, std::string_view body) {
  if (body.size() > FrameServer::kMaxFrame) throw Error(Errc::InvalidArgument, "frame too large");
  const std::uint32_t n = htonl(static_cast<std::uint32_t>(body.size()));
  std::string buf(reinterpret_cast<const char*>(&n), 4);
  buf.append(body);
  write_all(fd, buf.data(), buf.size());
}

bool read_frame(int fd, std::string& body) {
  char len_buf[4];
  const auto got = read_all(fd, len_buf, 4);
  if (got == 0) return false;
  if (got < 4) throw Error(Errc::IoError, "truncated frame header");
  std::uint32_t n;
  std::memcpy(&n, len_buf, 4);
  n = ntohl(n);
  if (n > FrameServer::kMaxFrame) throw Error(Errc::InvalidArgument, "frame of " + std::to_string(n) + " bytes");
  body.resize(n);
  if (read_all(fd, body.data(), n) < n) throw Error(Errc::IoError, "truncated frame body");
  return true;
}

FrameServer::FrameServer(Gateway& gateway, std::string host, std::uint16_t port)
    : gateway_(gateway), host_(std::move(host)), port_(port) {}

FrameServer::~FrameServer() { stop(); }

void FrameServer::start() {
  if (running_) return;
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listen_fd_ < 0) sys_fail("socket");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port_);
  if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1)
    throw Error(Errc::InvalidArgument, "bad listen address '" + host_ + "'");
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) sys_fail("bind");
  if (::listen(listen_fd_, 128) < 0) sys_fail("listen");
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void FrameServer::stop() {
  if (!running_.exchange(false)) return;
  acceptor_.join();
  ::close(listen_fd_);
  listen_fd_ = -1;
  std::list<std::pair<int, std::thread>> conns;
  {
    std::lock_guard lock(mu_);
    conns.swap(connections_);
  }
  for (auto& [fd, t] : conns) ::shutdown(fd, SHUT_RDWR);
  for (auto& [fd, t] : conns) t.join();
}

void FrameServer::accept_loop() {
  while (running_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 100) <= 0) continue;
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lock(mu_);
    connections_.emplace_back(fd, std::thread([this, fd] { serve(fd); }));
  }
}

void FrameServer::serve(int fd) {
  std::string body;
  try {
    while (running_ && read_frame(fd, body)) {
      Json reply;
      try {
        reply = handle(Json::parse(body));
      } catch (const Json::parse_error& e) {
        reply = error_reply(Errc::DecodeError, e.what());
      }
      write_frame(fd, reply.dump());
    }
  } catch (const Error&) {
  }
  ::close(fd);
}

Json FrameServer::handle(const Json& request) {
  try {
    if (!request.is_object()) throw Error(Errc::DecodeError, "frame must be a JSON object");
    auto str = [&](const char* key) {
      auto it = request.find(key);
      if (it == request.end() || !it->is_string())
        throw Error(Errc::DecodeError, std::string("frame field '") + key + "' must be a string");
      return it->get<std::string>();
    };
    const auto payload_it = request.find("payload");
    if (payload_it == request.end()) throw Error(Errc::DecodeError, "frame field 'payload' missing");
    const std::string payload = payload_it->is_string() ? payload_it->get<std::string>() : payload_it->dump();
    bus::Headers headers;
    if (auto h = request.find("headers"); h != request.end() && h->is_object())
      for (const auto& [k, v] : h->items()) headers[k] = v.is_string() ? v.get<std::string>() : v.dump();
    const auto offset =
        gateway_.ingest(str("tenant"), str("device"), Credentials{str("username"), str("password")}, payload, headers);
    return Json{{"ok", true}, {"offset", offset}};
  } catch (const Error& e) {
    return error_reply(e.code(), e.what());
  }
}

FrameClient::FrameClient(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res)
    throw Error(Errc::IoError, "cannot resolve " + host);
  fd_ = ::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol);
  const int rc = fd_ < 0 ? -1 : ::connect(fd_, res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc < 0) {
    if (fd_ >= 0) ::close(fd_);
    sys_fail("connect " + host + ":" + std::to_string(port));
  }
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

FrameClient::~FrameClient() {
  if (fd_ >= 0) ::close(fd_);
}

Json FrameClient::call(const Json& request) {
  write_frame(fd_, request.dump());
  std::string body;
  if (!read_frame(fd_, body)) throw Error(Errc::Unavailable, "server closed the connection");
  return Json::parse(body);
}

}  // namespace twinforge::gateway
