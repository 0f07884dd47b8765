#include "twinforge/registry/telemetry_connection.hpp"

#include "twinforge/bus/dead_letter.hpp"
#include "twinforge/core/error.hpp"
#include "twinforge/gateway/gateway.hpp"

namespace twinforge::registry {

TelemetryConnection::TelemetryConnection(bus::Bus& bus, Registry& registry, Options options)
    : bus_(bus), registry_(registry), options_(std::move(options)) {
  if (options_.group.empty()) options_.group = "registry-" + options_.tenant;
}

TelemetryConnection::~TelemetryConnection() { stop(); }

void TelemetryConnection::start() {
  if (running_.exchange(true)) return;
  worker_ = std::thread([this] { run(); });
}

void TelemetryConnection::stop() {
  if (!running_.exchange(false)) return;
  worker_.join();
}

void TelemetryConnection::run() {
  while (running_) {
    try {
      pump(std::chrono::milliseconds(100));
    } catch (const Error&) {
      std::this_thread::sleep_for(options_.retry_interval);
    }
  }
}

std::size_t TelemetryConnection::pump(std::chrono::milliseconds wait) {
  try {
    if (!sub_) sub_.emplace(bus_.subscribe(gateway::telemetry_topic(options_.tenant), options_.group));
    auto batch = sub_->poll_batch(256, wait);
    std::size_t settled = 0;
    for (auto& m : batch) {
      try {
        auto e = envelope_from_json(Json::parse(m.payload));
        for (const auto& [k, v] : bus::propagate(m.headers)) e.headers[k] = v;
        registry_.update(parse_topic(e.topic).thing_id, e, options_.subject);
      } catch (const Error& err) {
        if (err.code() == Errc::Unavailable) throw;
        bus::dead_letter(bus_, *options_.metrics, "telemetry-connection", err.what(), m.headers, m.payload);
      } catch (const Json::exception& err) {
        bus::dead_letter(bus_, *options_.metrics, "telemetry-connection", err.what(), m.headers, m.payload);
      }
      sub_->seek(m.offset + 1);
      sub_->commit();
      ++settled;
    }
    return settled;
  } catch (const Error&) {
    // Everything before the failing message is committed, so a fresh
    // subscription resumes exactly there.
    sub_.reset();
    throw;
  }
}

}  // namespace twinforge::registry
