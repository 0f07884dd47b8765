#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "twinforge/bus/bus.hpp"
#include "twinforge/core/envelope.hpp"
#include "twinforge/core/metrics.hpp"
#include "twinforge/store/kv_log.hpp"

namespace twinforge::gateway {

struct Credentials {
  std::string username;
  std::string password;
};

// One mapping step. With `target`, the source value lands at that envelope
// path; with `header`, it becomes a header (x-ts values are converted to
// decimal nanoseconds according to `format`).
struct MappingRule {
  std::string source;  // JSON pointer ("/a/b") or dotted key ("a.b")
  std::string target;
  std::string header;
  std::string format = "iso8601";  // iso8601 | epoch_s | epoch_ms | epoch_ns
  bool optional = false;
};

// Declarative payload mapper. Turns a device's JSON document into a modify
// command on the twin named by the device id.
class PayloadMapper {
 public:
  PayloadMapper() = default;
  explicit PayloadMapper(std::vector<MappingRule> rules);

  const std::vector<MappingRule>& rules() const noexcept { return rules_; }
  bool empty() const noexcept { return rules_.empty(); }

  // Throws Error(MappingFailed).
  Envelope map(const ThingId& thing, const Json& payload) const;

 private:
  std::vector<MappingRule> rules_;
};

Json to_json(const PayloadMapper& m);
PayloadMapper mapper_from_json(const Json& j);

struct DeviceInfo {
  std::string device_id;
  std::string username;
};

struct TenantInfo {
  std::string tenant_id;
  std::vector<DeviceInfo> devices;
  PayloadMapper mapper;
};

std::string telemetry_topic(const std::string& tenant_id);

// Salted SHA-256 in the form "<salt hex>$<digest hex>".
std::string hash_password(const std::string& password);
bool verify_password(const std::string& password, const std::string& stored);

// Tenants, device credentials and telemetry intake. Each accepted message
// is published to `telemetry/<tenant>` with a `device-id` header.
class Gateway {
 public:
  struct Options {
    std::filesystem::path data_dir;
    store::Durability durability = store::Durability::Write;
    std::shared_ptr<Metrics> metrics = std::make_shared<Metrics>();
    const Clock* clock = &system_clock();
  };

  Gateway(bus::Bus& bus, Options options);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  void create_tenant(const std::string& tenant_id, const PayloadMapper& mapper = {});
  void delete_tenant(const std::string& tenant_id);
  void set_mapper(const std::string& tenant_id, const PayloadMapper& mapper);
  std::vector<std::string> list_tenants() const;
  TenantInfo tenant(const std::string& tenant_id) const;

  void register_device(const std::string& tenant_id, const std::string& device_id, const Credentials& credentials);
  void remove_device(const std::string& tenant_id, const std::string& device_id);

  // Authenticates, maps and publishes. Returns the telemetry offset.
  // A payload that is already an envelope JSON is published verbatim;
  // anything else goes through the tenant's mapper. Headers given here
  // (x-ts, correlation-id) travel with the message.
  std::uint64_t ingest(const std::string& tenant_id, const std::string& device_id, const Credentials& credentials,
                       std::string_view payload, const bus::Headers& headers = {});

  bus::Subscription subscribe_telemetry(const std::string& tenant_id);
  bus::Subscription subscribe_telemetry(const std::string& tenant_id, const std::string& group);

  void crash();
  void recover();
  bool available() const noexcept;

 private:
  struct State;
  State& state() const;

  bus::Bus& bus_;
  Options options_;
  mutable std::mutex mu_;
  std::unique_ptr<State> state_;
};

}  // namespace twinforge::gateway
