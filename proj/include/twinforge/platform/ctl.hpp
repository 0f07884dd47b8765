#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "twinforge/gateway/gateway.hpp"
#include "twinforge/platform/api.hpp"

namespace twinforge::platform {

struct CtlRequest {
  const RouteSpec* route = nullptr;
  std::string method;
  std::string target;  // encoded path plus query string
  std::string body;
  std::string content_type;
  std::optional<gateway::Credentials> auth;
};

// Maps ctl arguments ("things get plant:s1") to the HTTP request of the
// matching route table entry. Throws Error(InvalidArgument).
CtlRequest ctl_request(const std::vector<std::string>& args);

std::string ctl_usage();

// Sends the request to `base_url` and prints the response body. Returns 0
// on success, 1 for an error response and 2 when the server is unreachable.
int run_ctl(const std::vector<std::string>& args, const std::string& base_url, std::ostream& out, std::ostream& err);

}  // namespace twinforge::platform
