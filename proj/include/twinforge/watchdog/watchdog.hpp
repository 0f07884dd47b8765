#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "twinforge/bus/bus.hpp"
#include "twinforge/core/metrics.hpp"
#include "twinforge/core/value_codec.hpp"
#include "twinforge/store/kv_log.hpp"

namespace twinforge::watchdog {

inline constexpr const char* kOriginator = "watchdog";

struct TimerState {
  bool armed = false;
  std::optional<TimestampNs> deadline;  // unset while armed without an interval

  bool operator==(const TimerState&) const = default;
};

struct DeviceConfig {
  std::string device_id;
  bool active = true;
  std::string ml_input_topic;
  std::vector<ValueSpec> required_values;
  std::optional<TimestampNs> learned_interval;  // ns, k seconds + 200 ms

  bool operator==(const DeviceConfig&) const = default;
};

struct TenantConfig {
  std::string tenant_id;
  bool active = false;
  std::vector<DeviceConfig> devices;
};

// ceil(gap) whole seconds, at least one, plus 200 ms.
TimestampNs learn_interval(TimestampNs gap);

Json to_json(const DeviceConfig& d, const std::optional<TimerState>& timer = std::nullopt);
DeviceConfig device_from_json(const Json& j);
Json to_json(const TenantConfig& t);
TenantConfig tenant_from_json(const Json& j);

struct Dispatch {
  std::string device_id;
  std::string topic;
  TimestampNs at = 0;
  std::string bytes;
};

// Silence detection for the devices of one tenant, driven by explicit
// timestamps. Due timers always fire before a message with the same or a
// later time is handled. Not thread-safe.
class Engine {
 public:
  using DispatchFn = std::function<void(const Dispatch&)>;

  explicit Engine(DispatchFn dispatch, std::shared_ptr<Metrics> metrics = std::make_shared<Metrics>());

  // Replaces the device's config; its timer starts off.
  void put_device(DeviceConfig config);
  void remove_device(const std::string& device_id);
  void set_active(const std::string& device_id, bool active);
  bool has_device(const std::string& device_id) const { return devices_.count(device_id) != 0; }
  const DeviceConfig& device(const std::string& device_id) const;
  TimerState timer(const std::string& device_id) const;
  std::vector<std::string> device_ids() const;

  // Returns true when the learned interval changed. Unknown or inactive
  // devices are ignored.
  bool on_message(const std::string& device_id, TimestampNs t, const std::map<std::string, Json>& fields);
  void advance_to(TimestampNs t);
  std::optional<TimestampNs> next_deadline() const;

 private:
  struct Device {
    DeviceConfig config;
    std::optional<TimestampNs> last_message;
    bool armed = false;
    std::optional<TimestampNs> deadline;
    bool silent = false;  // fired since the last real message
  };

  void fire(Device& d, TimestampNs at);

  DispatchFn dispatch_;
  std::shared_ptr<Metrics> metrics_;
  std::map<std::string, Device> devices_;
};

// Watchdog service: tenant and device admin with persisted config, and one
// supervisor thread per active tenant reading `telemetry/<tenant>` and
// publishing synthetic inputs to each device's ML input topic.
class Watchdog {
 public:
  struct Options {
    std::filesystem::path data_dir;
    store::Durability durability = store::Durability::Write;
    std::shared_ptr<Metrics> metrics = std::make_shared<Metrics>();
    const Clock* clock = &system_clock();
    std::chrono::milliseconds tick{50};
  };

  Watchdog(bus::Bus& bus, Options options);
  ~Watchdog();
  Watchdog(const Watchdog&) = delete;
  Watchdog& operator=(const Watchdog&) = delete;

  // Launches supervisors for every tenant marked active.
  void start();
  void stop();

  void create_tenant(const TenantConfig& tenant);
  TenantConfig tenant(const std::string& tenant_id) const;
  std::vector<TenantConfig> tenants() const;
  void delete_tenant(const std::string& tenant_id);
  void set_tenant_active(const std::string& tenant_id, bool active);

  void add_device(const std::string& tenant_id, const DeviceConfig& device);
  DeviceConfig device(const std::string& tenant_id, const std::string& device_id) const;
  Json device_json(const std::string& tenant_id, const std::string& device_id) const;
  void delete_device(const std::string& tenant_id, const std::string& device_id);
  void set_device_active(const std::string& tenant_id, const std::string& device_id, bool active);

  bool supervising(const std::string& tenant_id) const;
  std::size_t supervisor_count() const;

 private:
  struct Supervisor;

  void persist(const TenantConfig& t);
  void launch(const std::string& tenant_id);
  void halt(const std::string& tenant_id);
  TenantConfig& find(const std::string& tenant_id);
  const TenantConfig& find(const std::string& tenant_id) const;

  bus::Bus& bus_;
  Options options_;
  mutable std::mutex mu_;
  store::KvLog kv_;
  std::map<std::string, TenantConfig> tenants_;
  std::map<std::string, std::unique_ptr<Supervisor>> supervisors_;
  bool started_ = false;
};

}  // namespace twinforge::watchdog
