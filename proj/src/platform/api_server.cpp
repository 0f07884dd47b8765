#include <algorithm>
#include <cctype>
#include <thread>

#include "httplib.h"
#include "twinforge/platform/api.hpp"

namespace twinforge::platform {

struct HttpApi::Server {
  httplib::Server http;
  std::thread thread;
};

HttpApi::HttpApi(Platform& platform, Options options) : platform_(platform), options_(std::move(options)) {
  verify_handlers();
}

HttpApi::~HttpApi() { stop(); }

void HttpApi::start() {
  if (server_) return;
  server_ = std::make_unique<Server>();
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    ApiRequest r;
    r.method = req.method;
    r.path = req.target.substr(0, req.target.find('?'));
    for (const auto& [k, v] : req.params) r.query[k] = v;
    for (const auto& [k, v] : req.headers) {
      std::string name = k;
      std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
      r.headers[name] = v;
    }
    r.body = req.body;
    const auto out = handle(r);
    res.status = out.status;
    if (out.status == 401) res.set_header("WWW-Authenticate", "Basic realm=\"twinforge\"");
    res.set_content(out.body, out.content_type);
  };
  auto& http = server_->http;
  http.Get(".*", handler);
  http.Post(".*", handler);
  http.Put(".*", handler);
  http.Delete(".*", handler);
  int port = options_.port;
  if (port == 0) {
    port = http.bind_to_any_port(options_.host);
  } else if (!http.bind_to_port(options_.host, port)) {
    port = -1;
  }
  if (port < 0) {
    server_.reset();
    throw Error(Errc::IoError, "cannot listen on " + options_.host + ":" + std::to_string(options_.port));
  }
  port_ = static_cast<std::uint16_t>(port);
  server_->thread = std::thread([this] { server_->http.listen_after_bind(); });
  server_->http.wait_until_ready();
}

void HttpApi::stop() {
  if (!server_) return;
  server_->http.stop();
  if (server_->thread.joinable()) server_->thread.join();
  server_.reset();
}

}  // namespace twinforge::platform
