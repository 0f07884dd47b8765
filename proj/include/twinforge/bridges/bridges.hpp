#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "twinforge/bus/bus.hpp"
#include "twinforge/core/envelope.hpp"
#include "twinforge/core/metrics.hpp"
#include "twinforge/core/value_codec.hpp"
#include "twinforge/registry/registry.hpp"
#include "twinforge/store/kv_log.hpp"

namespace twinforge::bridges {

// Headers a route attaches to each queued envelope.
inline constexpr const char* kRouteHeader = "route-id";
inline constexpr const char* kModeHeader = "route-mode";
inline constexpr const char* kHorizonHeader = "route-horizon-s";

inline constexpr const char* kPredictedSuffix = "_predicted";

// Principal used by a route when applying predictions.
std::string route_originator(const std::string& route_id);

// Replaces placeholders in a Ditto-message template. A string that is
// exactly "{i}" becomes the number outputs[i]; "{i}" inside a longer string
// is replaced textually. Keys are never touched. Throws
// Error(IndexOutOfRange) or Error(InvalidResult) when the result is not a
// valid envelope.
Envelope substitute(const Json& tmpl, const std::vector<double>& outputs);
// Largest placeholder index in the template, if any.
std::optional<std::size_t> max_placeholder(const Json& tmpl);

// ---------------------------------------------------------------- forwarder

struct ForwarderDevice {
  std::string device_id;
  std::string ml_input_topic;
  std::vector<ValueSpec> required_values;
  bool active = true;
  bool operator==(const ForwarderDevice&) const = default;
};

struct ForwarderConfig {
  std::string tenant_id;
  std::vector<ForwarderDevice> devices;
  bool active = true;
  bool operator==(const ForwarderConfig&) const = default;
};

Json to_json(const ForwarderConfig& f);
ForwarderConfig forwarder_from_json(const Json& j);

// Encodes one telemetry message per the device plan, using the message's
// own values; time fields come from `time`. Throws Error(MappingFailed).
std::string forward_input(const ForwarderDevice& device, const Envelope& message, TimestampNs time);

// Forwards every telemetry message of the listed devices to their ML input
// topics, one loop per active tenant.
class Forwarders {
 public:
  struct Options {
    std::filesystem::path data_dir;
    store::Durability durability = store::Durability::Write;
    std::shared_ptr<Metrics> metrics = std::make_shared<Metrics>();
    const Clock* clock = &system_clock();
    std::chrono::milliseconds retry_interval{50};
  };

  Forwarders(bus::Bus& bus, Options options);
  ~Forwarders();
  Forwarders(const Forwarders&) = delete;
  Forwarders& operator=(const Forwarders&) = delete;

  void create(const ForwarderConfig& config);
  ForwarderConfig get(const std::string& tenant_id) const;
  std::vector<ForwarderConfig> list() const;
  void remove(const std::string& tenant_id);
  void set_active(const std::string& tenant_id, bool active);

  void start();
  void stop();
  std::size_t pump(const std::string& tenant_id, std::chrono::milliseconds wait);

 private:
  struct Loop;
  std::shared_ptr<Loop> find(const std::string& tenant_id) const;
  void launch(const std::shared_ptr<Loop>& l);
  void halt(const std::shared_ptr<Loop>& l);
  std::size_t pump_one(Loop& l, std::chrono::milliseconds wait);

  bus::Bus& bus_;
  Options options_;
  mutable std::mutex mu_;
  store::KvLog kv_;
  std::map<std::string, std::shared_ptr<Loop>> loops_;
  bool started_ = false;
};

// ---------------------------------------------------------------- routes

enum class RouteMode { Update, FutureCopy };

std::string_view to_string(RouteMode m) noexcept;
RouteMode parse_route_mode(std::string_view text);

struct PredictionRoute {
  std::string route_id;
  std::string source_topic;
  std::string target_queue;
  bool active = true;
  Json ditto_message;
  RouteMode mode = RouteMode::Update;
  double horizon_s = 0;
  bool operator==(const PredictionRoute&) const = default;
};

Json to_json(const PredictionRoute& r);
// Also checks that the template yields a valid envelope.
PredictionRoute route_from_json(const Json& j);
void validate_route(const PredictionRoute& r);

// Reads ML outputs, substitutes them into the route template and enqueues
// the envelope on the route's queue.
class Routes {
 public:
  struct Options {
    std::filesystem::path data_dir;
    store::Durability durability = store::Durability::Write;
    std::shared_ptr<Metrics> metrics = std::make_shared<Metrics>();
    std::chrono::milliseconds retry_interval{50};
  };

  Routes(bus::Bus& bus, Options options);
  ~Routes();
  Routes(const Routes&) = delete;
  Routes& operator=(const Routes&) = delete;

  void create(const PredictionRoute& route);
  PredictionRoute get(const std::string& route_id) const;
  std::vector<PredictionRoute> list() const;
  void remove(const std::string& route_id);
  // Deactivation stops consumption; outputs stay in the source topic and
  // are picked up from the committed offset on reactivation.
  void set_active(const std::string& route_id, bool active);

  void start();
  void stop();
  std::size_t pump(const std::string& route_id, std::chrono::milliseconds wait);

 private:
  struct Loop;
  std::shared_ptr<Loop> find(const std::string& route_id) const;
  void launch(const std::shared_ptr<Loop>& l);
  void halt(const std::shared_ptr<Loop>& l);
  std::size_t pump_one(Loop& l, std::chrono::milliseconds wait);

  bus::Bus& bus_;
  Options options_;
  mutable std::mutex mu_;
  store::KvLog kv_;
  std::map<std::string, std::shared_ptr<Loop>> loops_;
  bool started_ = false;
};

// Creates `<ns>:<name>_predicted` from the source twin on first use and
// applies the envelope to the copy. The source twin is never modified.
ThingId copy_future(registry::Registry& registry, const ThingId& source, const Envelope& envelope, double horizon_s,
                    const std::string& subject);

// Registry-side stage of the prediction path: drains route queues and
// applies each envelope, acknowledging only after the registry accepted it.
class RouteConsumer {
 public:
  struct Options {
    std::shared_ptr<Metrics> metrics = std::make_shared<Metrics>();
    std::chrono::milliseconds retry_interval{50};
  };

  RouteConsumer(bus::Bus& bus, registry::Registry& registry, Options options);
  ~RouteConsumer();
  RouteConsumer(const RouteConsumer&) = delete;
  RouteConsumer& operator=(const RouteConsumer&) = delete;

  void watch(const std::string& queue);
  std::vector<std::string> queues() const;

  void start();
  void stop();
  bool running() const noexcept { return running_; }
  // Applies what is available within `wait` on each watched queue.
  std::size_t pump(std::chrono::milliseconds wait);

 private:
  void apply(const bus::Message& m);

  bus::Bus& bus_;
  registry::Registry& registry_;
  Options options_;
  mutable std::mutex mu_;
  std::set<std::string> queues_;
  std::atomic<bool> running_{false};
  std::thread worker_;
};

}  // namespace twinforge::bridges
