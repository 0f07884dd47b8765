#include <cctype>
#include <cstdio>

#include "twinforge/platform/api.hpp"

namespace twinforge::platform {

const std::vector<RouteSpec>& route_table() {
  using B = BodyKind;
  static const std::vector<RouteSpec> table{
      {"GET", "/health", "health", {}, {}, B::None, false, "health"},
      {"GET", "/metrics", "metrics", {}, {}, B::None, false, "metrics"},
      {"GET", "/api/scene", "scene", {}, {}, B::None, false, "scene"},

      {"GET", "/api/policies", "policies list", {}, {}, B::None, false, "policies list"},
      {"GET", "/api/policies/:id", "policies get", {}, {}, B::None, false, "policies get plant:policy"},
      {"PUT", "/api/policies/:id", "policies put", {}, {}, B::Json, false,
       R"(policies put plant:policy --data {"entries":{"gateway":{"read":true,"write":true}}})"},

      {"GET", "/api/things", "things list", {"roots"}, {}, B::None, false, "things list --roots true"},
      {"POST", "/api/things", "things create", {}, {"parent"}, B::Json, false,
       R"(things create --data {"thingId":"plant:s1","policyId":"plant:policy"})"},
      {"GET", "/api/things/:id", "things get", {}, {}, B::None, false, "things get plant:s1"},
      {"DELETE", "/api/things/:id", "things delete", {"mode"}, {}, B::None, false,
       "things delete plant:s1 --mode cascade"},
      {"GET", "/api/things/:id/children", "things children", {}, {}, B::None, false, "things children plant:s1"},
      {"GET", "/api/things/:id/parents", "things parents", {}, {}, B::None, false, "things parents plant:s1"},
      {"PUT", "/api/things/:id/children/:child", "things link", {}, {}, B::None, false,
       "things link plant:unit plant:s1"},
      {"DELETE", "/api/things/:id/children/:child", "things unlink", {}, {}, B::None, false,
       "things unlink plant:unit plant:s1"},
      {"POST", "/api/things/:id/commands", "things command", {"subject"}, {}, B::Json, false,
       R"(things command plant:s1 --subject gateway --data {"topic":"plant/s1/things/twin/commands/modify","path":"/features/f/properties/value","value":1})"},

      {"GET", "/api/types", "types list", {}, {}, B::None, false, "types list"},
      {"POST", "/api/types", "types create", {}, {}, B::Json, false,
       R"(types create --data {"thingId":"plant:Sensor","policyId":"plant:policy"})"},
      {"GET", "/api/types/:id", "types get", {}, {}, B::None, false, "types get plant:Sensor"},
      {"DELETE", "/api/types/:id", "types delete", {}, {}, B::None, false, "types delete plant:Sensor"},
      {"POST", "/api/types/:id/instantiate", "types instantiate", {}, {"thingId", "policyId"}, B::Json, false,
       "types instantiate plant:Sensor plant:s2 --policyId plant:policy"},

      {"GET", "/api/tenants", "tenants list", {}, {}, B::None, false, "tenants list"},
      {"POST", "/api/tenants", "tenants create", {}, {"tenantId"}, B::Json, false, "tenants create plant"},
      {"GET", "/api/tenants/:id", "tenants get", {}, {}, B::None, false, "tenants get plant"},
      {"DELETE", "/api/tenants/:id", "tenants delete", {}, {}, B::None, false, "tenants delete plant"},
      {"PUT", "/api/tenants/:id/mapper", "tenants mapper", {}, {}, B::Json, false,
       R"(tenants mapper plant --data {"rules":[{"source":"/v","target":"/features/f/properties/value"}]})"},
      {"POST", "/api/tenants/:id/devices", "tenants add-device", {}, {"deviceId", "username", "password"}, B::Json,
       false, "tenants add-device plant s1 --username s1 --password secret"},
      {"DELETE", "/api/tenants/:id/devices/:device", "tenants remove-device", {}, {}, B::None, false,
       "tenants remove-device plant s1"},
      {"POST", "/ingest/:tenant/:device", "ingest", {}, {}, B::Raw, true,
       R"(ingest plant s1 --username s1 --password secret --data {"v":1})"},

      {"GET", "/api/bus/topics", "bus topics", {}, {}, B::None, false, "bus topics"},
      {"GET", "/api/bus/topics/:name", "bus read", {"from", "max"}, {}, B::None, false,
       "bus read telemetry/plant --from 0 --max 10"},
      {"GET", "/api/bus/queues", "bus queues", {}, {}, B::None, false, "bus queues"},

      {"GET", "/api/ts", "ts query", {"thing", "feature", "property", "from", "to", "originator", "format"}, {},
       B::None, false, "ts query --thing plant:s1 --feature f --property value --format csv"},
      {"GET", "/api/ts/series", "ts series", {}, {}, B::None, false, "ts series"},

      {"GET", "/api/watchdog/tenants", "watchdog list", {}, {}, B::None, false, "watchdog list"},
      {"POST", "/api/watchdog/tenants", "watchdog create", {}, {}, B::Json, false,
       R"(watchdog create --data {"tenantId":"plant","devices":[]})"},
      {"GET", "/api/watchdog/tenants/:id", "watchdog get", {}, {}, B::None, false, "watchdog get plant"},
      {"DELETE", "/api/watchdog/tenants/:id", "watchdog delete", {}, {}, B::None, false, "watchdog delete plant"},
      {"POST", "/api/watchdog/tenants/:id/activate", "watchdog activate", {}, {}, B::None, false,
       "watchdog activate plant"},
      {"POST", "/api/watchdog/tenants/:id/deactivate", "watchdog deactivate", {}, {}, B::None, false,
       "watchdog deactivate plant"},
      {"POST", "/api/watchdog/tenants/:id/devices", "watchdog add-device", {}, {}, B::Json, false,
       R"(watchdog add-device plant --data {"deviceId":"s1","mlInputTopic":"in","required_values":[]})"},
      {"GET", "/api/watchdog/tenants/:id/devices/:device", "watchdog device", {}, {}, B::None, false,
       "watchdog device plant s1"},
      {"DELETE", "/api/watchdog/tenants/:id/devices/:device", "watchdog remove-device", {}, {}, B::None, false,
       "watchdog remove-device plant s1"},
      {"POST", "/api/watchdog/tenants/:id/devices/:device/activate", "watchdog activate-device", {}, {}, B::None,
       false, "watchdog activate-device plant s1"},
      {"POST", "/api/watchdog/tenants/:id/devices/:device/deactivate", "watchdog deactivate-device", {}, {},
       B::None, false, "watchdog deactivate-device plant s1"},

      {"GET", "/api/ml/models", "models list", {}, {}, B::None, false, "models list"},
      {"POST", "/api/ml/models", "models deploy", {}, {}, B::Json, false,
       R"(models deploy --data {"modelId":"m","inputTopic":"in","outputTopic":"out","inputSchema":["float64"],"function":{"id":"identity"}})"},
      {"GET", "/api/ml/models/:id", "models get", {}, {}, B::None, false, "models get m"},
      {"DELETE", "/api/ml/models/:id", "models undeploy", {}, {}, B::None, false, "models undeploy m"},

      {"GET", "/api/bridges/forwarders", "forwarders list", {}, {}, B::None, false, "forwarders list"},
      {"POST", "/api/bridges/forwarders", "forwarders create", {}, {}, B::Json, false,
       R"(forwarders create --data {"tenantId":"plant","devices":[]})"},
      {"GET", "/api/bridges/forwarders/:id", "forwarders get", {}, {}, B::None, false, "forwarders get plant"},
      {"DELETE", "/api/bridges/forwarders/:id", "forwarders delete", {}, {}, B::None, false,
       "forwarders delete plant"},
      {"POST", "/api/bridges/forwarders/:id/activate", "forwarders activate", {}, {}, B::None, false,
       "forwarders activate plant"},
      {"POST", "/api/bridges/forwarders/:id/deactivate", "forwarders deactivate", {}, {}, B::None, false,
       "forwarders deactivate plant"},

      {"GET", "/api/bridges/routes", "routes list", {}, {}, B::None, false, "routes list"},
      {"POST", "/api/bridges/routes", "routes create", {}, {}, B::Json, false,
       R"(routes create --data {"routeId":"r","sourceTopic":"out","targetQueue":"q","ditto_message":{"topic":"plant/s1/things/twin/commands/modify","path":"/features/f/properties/value","value":"{0}"}})"},
      {"GET", "/api/bridges/routes/:id", "routes get", {}, {}, B::None, false, "routes get r"},
      {"DELETE", "/api/bridges/routes/:id", "routes delete", {}, {}, B::None, false, "routes delete r"},
      {"POST", "/api/bridges/routes/:id/activate", "routes activate", {}, {}, B::None, false, "routes activate r"},
      {"POST", "/api/bridges/routes/:id/deactivate", "routes deactivate", {}, {}, B::None, false,
       "routes deactivate r"},

      {"GET", "/api/faults", "faults list", {}, {}, B::None, false, "faults list"},
      {"POST", "/api/faults/:service/kill", "faults kill", {}, {}, B::None, false, "faults kill timeseries"},
      {"POST", "/api/faults/:service/restart", "faults restart", {}, {}, B::None, false,
       "faults restart timeseries"},
  };
  return table;
}

namespace {

std::vector<std::string> segments(const std::string& path) {
  std::vector<std::string> out;
  std::size_t start = 0;
  if (!path.empty() && path[0] == '/') start = 1;
  while (start <= path.size()) {
    const auto slash = path.find('/', start);
    out.push_back(path.substr(start, slash == std::string::npos ? std::string::npos : slash - start));
    if (slash == std::string::npos) break;
    start = slash + 1;
  }
  return out;
}

}  // namespace

std::string percent_encode(const std::string& text) {
  std::string out;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '-' || c == '.' || c == '_' || c == '~' || c == ':') {
      out += static_cast<char>(c);
    } else {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    }
  }
  return out;
}

std::string percent_decode(const std::string& text) {
  std::string out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '%' && i + 2 < text.size() && std::isxdigit(static_cast<unsigned char>(text[i + 1])) &&
        std::isxdigit(static_cast<unsigned char>(text[i + 2]))) {
      out += static_cast<char>(std::stoi(text.substr(i + 1, 2), nullptr, 16));
      i += 2;
    } else {
      out += text[i];
    }
  }
  return out;
}

bool match_route(const std::string& pattern, const std::string& path, std::map<std::string, std::string>* params) {
  const auto want = segments(pattern);
  const auto have = segments(path);
  if (want.size() != have.size()) return false;
  std::map<std::string, std::string> found;
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (!want[i].empty() && want[i][0] == ':') {
      if (have[i].empty()) return false;
      found[want[i].substr(1)] = percent_decode(have[i]);
    } else if (want[i] != have[i]) {
      return false;
    }
  }
  if (params) *params = std::move(found);
  return true;
}

int http_status(Errc code) noexcept {
  switch (code) {
    case Errc::NotFound:
    case Errc::UnknownTenant: return 404;
    case Errc::DuplicateId:
    case Errc::DuplicateDevice:
    case Errc::DuplicateModel:
    case Errc::Conflict:
    case Errc::TwinAlreadyHasParent:
    case Errc::CycleCreated: return 409;
    case Errc::Forbidden: return 403;
    case Errc::AuthFailed: return 401;
    case Errc::Unavailable: return 503;
    case Errc::IoError:
    case Errc::Corrupt: return 500;
    default: return 400;
  }
}

}  // namespace twinforge::platform
