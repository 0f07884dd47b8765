#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "twinforge/bus/bus.hpp"
#include "twinforge/core/metrics.hpp"
#include "twinforge/registry/registry.hpp"

namespace twinforge::registry {

// Reads a tenant's telemetry topic and applies each command to the twin it
// addresses, acting as `subject`. Progress is committed per message after
// the registry accepted it, so restarts neither skip nor lose telemetry.
// Commands the registry rejects are dead-lettered; outages are retried.
class TelemetryConnection {
 public:
  struct Options {
    std::string tenant;
    std::string group;  // defaults to "registry-<tenant>"
    std::string subject = "gateway";
    std::shared_ptr<Metrics> metrics = std::make_shared<Metrics>();
    std::chrono::milliseconds retry_interval{50};
  };

  TelemetryConnection(bus::Bus& bus, Registry& registry, Options options);
  ~TelemetryConnection();
  TelemetryConnection(const TelemetryConnection&) = delete;
  TelemetryConnection& operator=(const TelemetryConnection&) = delete;

  void start();
  void stop();

  // Handles what is available within `wait`; returns the number of
  // messages settled (applied or dead-lettered).
  std::size_t pump(std::chrono::milliseconds wait);

 private:
  void run();

  bus::Bus& bus_;
  Registry& registry_;
  Options options_;
  std::optional<bus::Subscription> sub_;
  std::atomic<bool> running_{false};
  std::thread worker_;
};

}  // namespace twinforge::registry
