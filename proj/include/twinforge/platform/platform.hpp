#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "twinforge/bridges/bridges.hpp"
#include "twinforge/bus/bus.hpp"
#include "twinforge/gateway/gateway.hpp"
#include "twinforge/ml/runtime.hpp"
#include "twinforge/registry/registry.hpp"
#include "twinforge/registry/telemetry_connection.hpp"
#include "twinforge/timeseries/sink.hpp"
#include "twinforge/timeseries/store.hpp"
#include "twinforge/watchdog/watchdog.hpp"

namespace twinforge::platform {

// Services that can be killed and restarted for fault injection.
enum class Service { Gateway, Registry, Bus, Timeseries, RouteConsumer };

inline constexpr std::array<Service, 5> kServices{Service::Gateway, Service::Registry, Service::Bus,
                                                  Service::Timeseries, Service::RouteConsumer};

std::string_view to_string(Service s) noexcept;
// Throws Error(InvalidArgument).
Service parse_service(std::string_view text);

// All services of one deployment in one process, sharing a bus, a metrics
// registry and a clock. Each service keeps its state below data_dir.
class Platform {
 public:
  struct Options {
    std::filesystem::path data_dir;
    store::Durability durability = store::Durability::Write;
    const Clock* clock = &system_clock();
    std::chrono::milliseconds watchdog_tick{50};
    std::chrono::milliseconds retry_interval{50};
  };

  explicit Platform(Options options);
  ~Platform();
  Platform(const Platform&) = delete;
  Platform& operator=(const Platform&) = delete;

  void start();
  // Stops every consumer loop; the state on disk stays.
  void stop();
  bool running() const noexcept { return running_; }

  // Applies a seed document. Entities that already exist are kept.
  void seed(const Json& seed);

  // Gateway tenant plus the connection feeding its telemetry to the registry.
  void create_tenant(const std::string& tenant_id, const gateway::PayloadMapper& mapper = {});
  void delete_tenant(const std::string& tenant_id);
  // Route plus a route consumer watch on its target queue.
  void create_route(const bridges::PredictionRoute& route);

  // Abrupt termination of the service's in-process component, and restart
  // from its persisted state.
  void kill(Service s);
  void restart(Service s);
  bool alive(Service s) const;

  bus::Bus& bus() noexcept { return *bus_; }
  registry::Registry& registry() noexcept { return *registry_; }
  gateway::Gateway& gateway() noexcept { return *gateway_; }
  watchdog::Watchdog& watchdog() noexcept { return *watchdog_; }
  ml::Runtime& runtime() noexcept { return *runtime_; }
  bridges::Forwarders& forwarders() noexcept { return *forwarders_; }
  bridges::Routes& routes() noexcept { return *routes_; }
  // Throws Error(Unavailable) while the time series service is down.
  std::shared_ptr<timeseries::Store> timeseries() const;
  Metrics& metrics() noexcept { return *metrics_; }
  const Clock& clock() const noexcept { return *options_.clock; }
  const std::filesystem::path& data_dir() const noexcept { return options_.data_dir; }

 private:
  void connect(const std::string& tenant_id);
  void open_timeseries();
  void open_route_consumer();

  Options options_;
  std::shared_ptr<Metrics> metrics_ = std::make_shared<Metrics>();
  std::unique_ptr<bus::Bus> bus_;
  std::unique_ptr<registry::Registry> registry_;
  std::unique_ptr<gateway::Gateway> gateway_;
  std::unique_ptr<watchdog::Watchdog> watchdog_;
  std::unique_ptr<ml::Runtime> runtime_;
  std::unique_ptr<bridges::Forwarders> forwarders_;
  std::unique_ptr<bridges::Routes> routes_;

  mutable std::recursive_mutex mu_;
  std::map<std::string, std::unique_ptr<registry::TelemetryConnection>> connections_;
  std::shared_ptr<timeseries::Store> store_;
  std::unique_ptr<timeseries::Sink> sink_;
  std::unique_ptr<bridges::RouteConsumer> consumer_;
  bool running_ = false;
};

}  // namespace twinforge::platform
