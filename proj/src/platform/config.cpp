#include "twinforge/platform/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "twinforge/bridges/bridges.hpp"
#include "twinforge/core/error.hpp"
#include "twinforge/core/policy.hpp"
#include "twinforge/gateway/gateway.hpp"
#include "twinforge/ml/runtime.hpp"
#include "twinforge/watchdog/watchdog.hpp"

namespace twinforge::platform {

namespace {

int line_at(std::string_view text, std::size_t pos) {
  pos = std::min(pos, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

// Minimal scanner used only to find where a value starts.
struct Scanner {
  std::string_view s;
  std::size_t i = 0;

  void ws() {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r')) ++i;
  }

  std::string string_token() {
    const std::size_t start = i++;
    while (i < s.size() && s[i] != '"') i += s[i] == '\\' ? 2 : 1;
    ++i;
    try {
      return Json::parse(s.substr(start, i - start)).get<std::string>();
    } catch (const Json::exception&) {
      return {};
    }
  }

  void skip_value() {
    ws();
    if (i >= s.size()) return;
    if (s[i] == '"') {
      string_token();
      return;
    }
    if (s[i] == '{' || s[i] == '[') {
      int depth = 0;
      while (i < s.size()) {
        const char c = s[i];
        if (c == '"') {
          string_token();
          continue;
        }
        if (c == '{' || c == '[') ++depth;
        if (c == '}' || c == ']') --depth;
        ++i;
        if (depth == 0) return;
      }
      return;
    }
    while (i < s.size() && s[i] != ',' && s[i] != '}' && s[i] != ']') ++i;
  }

  std::optional<std::size_t> find(const std::vector<std::string>& tokens, std::size_t k) {
    ws();
    if (k == tokens.size()) return i;
    if (i >= s.size()) return std::nullopt;
    if (s[i] == '{') {
      ++i;
      while (true) {
        ws();
        if (i >= s.size() || s[i] != '"') return std::nullopt;
        const auto key = string_token();
        ws();
        if (i >= s.size() || s[i] != ':') return std::nullopt;
        ++i;
        if (key == tokens[k]) return find(tokens, k + 1);
        skip_value();
        ws();
        if (i >= s.size() || s[i] != ',') return std::nullopt;
        ++i;
      }
    }
    if (s[i] == '[') {
      ++i;
      std::size_t index;
      try {
        index = std::stoul(tokens[k]);
      } catch (const std::exception&) {
        return std::nullopt;
      }
      for (std::size_t n = 0;; ++n) {
        ws();
        if (i >= s.size() || s[i] == ']') return std::nullopt;
        if (n == index) return find(tokens, k + 1);
        skip_value();
        ws();
        if (i >= s.size() || s[i] != ',') return std::nullopt;
        ++i;
      }
    }
    return std::nullopt;
  }
};

std::vector<std::string> pointer_tokens(Json::json_pointer p) {
  std::vector<std::string> out;
  while (!p.empty()) {
    out.push_back(p.back());
    p.pop_back();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

class Validator {
 public:
  explicit Validator(std::string_view text) : text_(text) {}

  [[noreturn]] void fail(const std::string& pointer, const std::string& message) const {
    const int line = line_of(text_, Json::json_pointer(pointer));
    throw ConfigError(line == 0 ? 1 : line, (pointer.empty() ? "" : pointer + ": ") + message);
  }

  // Runs `check`, turning library errors into located config errors.
  template <class F>
  void at(const std::string& pointer, F&& check) const {
    try {
      check();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      fail(pointer, e.what());
    } catch (const Json::exception& e) {
      fail(pointer, e.what());
    }
  }

 private:
  std::string_view text_;
};

const Json& array_section(const Validator& v, const Json& seed, const std::string& key) {
  static const Json empty = Json::array();
  auto it = seed.find(key);
  if (it == seed.end()) return empty;
  if (!it->is_array()) v.fail("/seed/" + key, "must be an array");
  return *it;
}

std::string str_field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_string())
    throw Error(Errc::InvalidArgument, std::string("missing string field '") + key + "'");
  return j[key].get<std::string>();
}

void validate_seed(const Validator& v, const Json& seed) {
  static const std::set<std::string> known{"policies", "types",   "twins",      "instantiate", "links",
                                           "tenants",  "watchdog", "models",    "forwarders",  "routes"};
  if (!seed.is_object()) v.fail("/seed", "must be an object");
  for (const auto& [k, _] : seed.items())
    if (!known.count(k)) v.fail("/seed/" + k, "unknown seed section '" + k + "'");

  auto each = [&](const std::string& key, auto&& check) {
    const auto& items = array_section(v, seed, key);
    for (std::size_t i = 0; i < items.size(); ++i)
      v.at("/seed/" + key + "/" + std::to_string(i), [&] { check(items[i]); });
  };
  each("policies", [](const Json& j) { validate_policy(policy_from_json(j)); });
  each("types", [](const Json& j) { twin_from_json(j); });
  each("twins", [](const Json& j) {
    Json copy = j;
    if (copy.is_object() && copy.contains("parent")) {
      parse_thing_id(str_field(copy, "parent"));
      copy.erase("parent");
    }
    twin_from_json(copy);
  });
  each("instantiate", [](const Json& j) {
    parse_thing_id(str_field(j, "type"));
    parse_thing_id(str_field(j, "thingId"));
    str_field(j, "policyId");
  });
  each("links", [](const Json& j) {
    parse_thing_id(str_field(j, "parent"));
    parse_thing_id(str_field(j, "child"));
  });
  each("tenants", [](const Json& j) {
    str_field(j, "tenantId");
    gateway::mapper_from_json(j.value("mapper", Json()));
    for (const auto& d : j.value("devices", Json::array())) {
      str_field(d, "deviceId");
      str_field(d, "username");
      str_field(d, "password");
    }
  });
  each("watchdog", [](const Json& j) { watchdog::tenant_from_json(j); });
  each("models", [](const Json& j) { ml::model_from_json(j); });
  each("forwarders", [](const Json& j) { bridges::forwarder_from_json(j); });
  each("routes", [](const Json& j) { bridges::validate_route(bridges::route_from_json(j)); });
}

}  // namespace

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
  };
}

std::string interpolate_env(std::string_view text, const EnvLookup& env) {
  std::string out;
  out.reserve(text.size());
  bool in_string = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string && c == '\\' && i + 1 < text.size()) {
      out += c;
      out += text[++i];
      continue;
    }
    if (c == '"') in_string = !in_string;
    if (c != '$' || i + 1 >= text.size() || text[i + 1] != '{') {
      out += c;
      continue;
    }
    const auto close = text.find('}', i + 2);
    if (close == std::string_view::npos) throw ConfigError(line_at(text, i), "unterminated ${ reference");
    const std::string_view inner = text.substr(i + 2, close - i - 2);
    const auto sep = inner.find(":-");
    const std::string name(inner.substr(0, sep));
    if (name.empty()) throw ConfigError(line_at(text, i), "empty variable name");
    auto value = env(name);
    if (!value && sep != std::string_view::npos) value = std::string(inner.substr(sep + 2));
    if (!value) throw ConfigError(line_at(text, i), "environment variable " + name + " is not set");
    if (in_string) {
      const auto quoted = Json(*value).dump();
      out.append(quoted, 1, quoted.size() - 2);
    } else {
      out += *value;
    }
    i = close;
  }
  return out;
}

int line_of(std::string_view text, const Json::json_pointer& pointer) {
  Scanner sc{text};
  auto pos = sc.find(pointer_tokens(pointer), 0);
  return pos ? line_at(text, *pos) : 0;
}

void parse_listen(const std::string& listen, std::string& host, std::uint16_t& port) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw Error(Errc::InvalidArgument, "listen must be host:port");
  const auto port_text = listen.substr(colon + 1);
  int value = -1;
  try {
    std::size_t used = 0;
    value = std::stoi(port_text, &used);
    if (used != port_text.size()) value = -1;
  } catch (const std::exception&) {
  }
  if (value < 0 || value > 65535) throw Error(Errc::InvalidArgument, "bad port '" + port_text + "'");
  host = colon == 0 ? "0.0.0.0" : listen.substr(0, colon);
  port = static_cast<std::uint16_t>(value);
}

Config parse_config(std::string_view raw, const EnvLookup& env) {
  const std::string text = interpolate_env(raw, env);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(line_at(text, e.byte == 0 ? 0 : e.byte - 1), e.what());
  }
  Validator v(text);
  if (!j.is_object()) v.fail("", "configuration must be a JSON object");
  static const std::set<std::string> known{"dataDir", "listen", "durability", "framePort", "seed", "scene", "bench"};
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) v.fail("/" + k, "unknown key '" + k + "'");

  Config c;
  if (auto it = j.find("dataDir"); it != j.end()) {
    if (!it->is_string() || it->get<std::string>().empty()) v.fail("/dataDir", "must be a non-empty string");
    c.data_dir = it->get<std::string>();
  }
  if (auto it = j.find("listen"); it != j.end()) {
    if (!it->is_string()) v.fail("/listen", "must be a string");
    v.at("/listen", [&] { parse_listen(it->get<std::string>(), c.host, c.port); });
  }
  if (auto it = j.find("durability"); it != j.end()) {
    if (*it == "write") {
      c.durability = store::Durability::Write;
    } else if (*it == "sync") {
      c.durability = store::Durability::Sync;
    } else {
      v.fail("/durability", "must be \"write\" or \"sync\"");
    }
  }
  if (auto it = j.find("framePort"); it != j.end()) {
    if (!it->is_number_integer() || *it < 0 || *it > 65535) v.fail("/framePort", "must be a port number");
    c.frame_port = it->get<std::uint16_t>();
  }
  if (auto it = j.find("seed"); it != j.end()) {
    validate_seed(v, *it);
    c.seed = *it;
  }
  if (auto it = j.find("scene"); it != j.end()) {
    if (!it->is_array()) v.fail("/scene", "must be an array");
    for (std::size_t i = 0; i < it->size(); ++i)
      v.at("/scene/" + std::to_string(i), [&] { parse_thing_id(str_field((*it)[i], "elementId")); });
    c.scene = *it;
  }
  if (auto it = j.find("bench"); it != j.end()) {
    if (!it->is_object()) v.fail("/bench", "must be an object");
    c.bench = *it;
  }
  return c;
}

Config load_config(const std::filesystem::path& path, const EnvLookup& env) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), env);
}

}  // namespace twinforge::platform
