#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "twinforge/core/twin.hpp"
#include "twinforge/store/record_file.hpp"

namespace twinforge::platform {

// A configuration problem, located at a 1-based line of the source text.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& message)
      : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

struct Config {
  std::filesystem::path data_dir = "data";
  std::string host = "127.0.0.1";
  std::uint16_t port = 8080;
  store::Durability durability = store::Durability::Write;
  std::optional<std::uint16_t> frame_port;  // gateway frame listener, off when unset
  Json seed = Json::object();
  Json scene = Json::array();
  Json bench = Json::object();
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

// The process environment.
EnvLookup process_env();

// Replaces ${VAR} and ${VAR:-default}. Inside JSON strings the value is
// escaped so that quotes and backslashes survive. An unset variable
// without a default is a ConfigError.
std::string interpolate_env(std::string_view text, const EnvLookup& env);

// 1-based line of the value at `pointer` in `text`, or 0 if not found.
int line_of(std::string_view text, const Json::json_pointer& pointer);

Config parse_config(std::string_view text, const EnvLookup& env = process_env());
Config load_config(const std::filesystem::path& path, const EnvLookup& env = process_env());

// "host:port" or ":port".
void parse_listen(const std::string& listen, std::string& host, std::uint16_t& port);

}  // namespace twinforge::platform
