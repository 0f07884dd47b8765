#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>

namespace twinforge {

// Named monotonically increasing counters, shared by the services of one
// platform instance.
class Metrics {
 public:
  std::atomic<std::uint64_t>& counter(const std::string& name);
  void add(const std::string& name, std::uint64_t n = 1) { counter(name).fetch_add(n); }
  std::uint64_t value(const std::string& name) const;
  std::map<std::string, std::uint64_t> snapshot() const;
  // One "twinforge_<name> <value>" line per counter.
  std::string render_text() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<std::atomic<std::uint64_t>>> counters_;
};

namespace metric {
inline constexpr const char* kIngested = "ingested";
inline constexpr const char* kStored = "stored";
inline constexpr const char* kDispatched = "dispatched";
inline constexpr const char* kDeadLettered = "dead_lettered";
inline constexpr const char* kRecoveryEvents = "recovery_events";
inline constexpr const char* kAuthFailures = "auth_failures";
inline constexpr const char* kMissingLastValue = "watchdog_missing_last_value";
inline constexpr const char* kSinkMalformed = "sink_malformed";
inline constexpr const char* kForwarded = "forwarded";
inline constexpr const char* kInferences = "inferences";
inline constexpr const char* kRouteApplied = "route_applied";
inline constexpr const char* kTwinUpdates = "twin_updates";
}  // namespace metric

}  // namespace twinforge
