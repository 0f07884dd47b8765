#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "twinforge/core/error.hpp"
#include "twinforge/core/twin.hpp"

namespace twinforge::platform {

class Platform;

enum class BodyKind { None, Json, Raw };

// One HTTP endpoint and the ctl command that reaches it. Path parameters
// (":name") take the first positional arguments in order; the rest fill
// `fields`. Flags named in `query` become query parameters and flags
// named in `fields` become members of the JSON body.
struct RouteSpec {
  std::string method;
  std::string pattern;
  std::string command;
  std::vector<std::string> query;
  std::vector<std::string> fields;
  BodyKind body = BodyKind::None;
  bool basic_auth = false;
  std::string example;  // ctl arguments after "ctl"
};

const std::vector<RouteSpec>& route_table();

// Splits on '/' and percent-decodes each captured parameter.
bool match_route(const std::string& pattern, const std::string& path, std::map<std::string, std::string>* params);

std::string percent_encode(const std::string& text);
std::string percent_decode(const std::string& text);

int http_status(Errc code) noexcept;

// Throws std::logic_error unless every route has exactly one handler.
void verify_handlers();

struct ApiRequest {
  std::string method;
  std::string path;  // raw, without the query string
  std::map<std::string, std::string> query;
  std::map<std::string, std::string> headers;  // lower-case names
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

// The combined HTTP surface of a platform.
class HttpApi {
 public:
  struct Options {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;  // 0 picks a free port
    Json scene = Json::array();
  };

  HttpApi(Platform& platform, Options options);
  ~HttpApi();
  HttpApi(const HttpApi&) = delete;
  HttpApi& operator=(const HttpApi&) = delete;

  // Dispatches without a network round trip.
  ApiResponse handle(const ApiRequest& request);

  // Binds and serves on a background thread. Throws Error(IoError).
  void start();
  void stop();
  std::uint16_t port() const noexcept { return port_; }

 private:
  struct Server;

  Platform& platform_;
  Options options_;
  std::uint16_t port_ = 0;
  std::unique_ptr<Server> server_;
};

}  // namespace twinforge::platform
