#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <optional>
#include <thread>

#include "twinforge/bus/bus.hpp"
#include "twinforge/core/envelope.hpp"
#include "twinforge/core/metrics.hpp"
#include "twinforge/timeseries/store.hpp"

namespace twinforge::timeseries {

// One point per non-null (feature, property) leaf the event writes.
// Attribute, policy and delete events yield nothing.
std::vector<Point> decompose(const Envelope& event, TimestampNs timestamp, const std::string& originator);

// Consumes twin events and stores their feature values. The group offset
// is committed only after the batch is durable in the store; malformed
// events are counted and skipped.
class Sink {
 public:
  struct Options {
    std::string topic = "twin-events";
    std::string group = "timeseries-sink";
    std::shared_ptr<Metrics> metrics = std::make_shared<Metrics>();
    const Clock* clock = &system_clock();
    std::size_t batch = 512;
    std::chrono::milliseconds retry_interval{50};
  };

  Sink(bus::Bus& bus, Store& store, Options options);
  ~Sink();
  Sink(const Sink&) = delete;
  Sink& operator=(const Sink&) = delete;

  void start();
  void stop();
  bool running() const noexcept { return running_; }

  // Consumes what is available within `wait`; returns events consumed.
  std::size_t pump(std::chrono::milliseconds wait);

 private:
  void run();

  bus::Bus& bus_;
  Store& store_;
  Options options_;
  std::optional<bus::Subscription> sub_;
  std::atomic<bool> running_{false};
  std::thread worker_;
};

}  // namespace twinforge::timeseries
