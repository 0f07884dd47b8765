#include <cmath>

#include "twinforge/core/error.hpp"
#include "twinforge/watchdog/watchdog.hpp"

namespace twinforge::watchdog {

TimestampNs learn_interval(TimestampNs gap) {
  TimestampNs whole = gap <= 0 ? 0 : (gap + kNsPerSecond - 1) / kNsPerSecond;
  if (whole < 1) whole = 1;
  return whole * kNsPerSecond + 200'000'000;
}

namespace {

Json interval_json(const std::optional<TimestampNs>& ns) {
  if (!ns) return nullptr;
  return static_cast<double>(*ns) / 1e9;
}

std::optional<TimestampNs> interval_from_json(const Json& j) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_number() || j.get<double>() <= 0) throw Error(Errc::InvalidArgument, "learned_interval_s must be positive");
  return static_cast<TimestampNs>(std::llround(j.get<double>() * 1e9));
}

std::string required_string(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty())
    throw Error(Errc::InvalidArgument, std::string("missing string field '") + key + "'");
  return j[key].get<std::string>();
}

}  // namespace

Json to_json(const DeviceConfig& d, const std::optional<TimerState>& timer) {
  Json j{{"deviceId", d.device_id},
         {"active", d.active},
         {"mlInputTopic", d.ml_input_topic},
         {"required_values", specs_to_json(d.required_values)},
         {"learned_interval_s", interval_json(d.learned_interval)}};
  if (timer) {
    j["timer"] = {{"armed", timer->armed}, {"deadline", timer->deadline ? Json(*timer->deadline) : Json(nullptr)}};
  }
  return j;
}

DeviceConfig device_from_json(const Json& j) {
  DeviceConfig d;
  d.device_id = required_string(j, "deviceId");
  d.ml_input_topic = required_string(j, "mlInputTopic");
  d.active = j.value("active", true);
  d.required_values = specs_from_json(j.value("required_values", Json::array()));
  d.learned_interval = interval_from_json(j.value("learned_interval_s", Json()));
  return d;
}

Json to_json(const TenantConfig& t) {
  Json devices = Json::array();
  for (const auto& d : t.devices) devices.push_back(to_json(d));
  return {{"tenantId", t.tenant_id}, {"active", t.active}, {"devices", devices}};
}

TenantConfig tenant_from_json(const Json& j) {
  TenantConfig t;
  t.tenant_id = required_string(j, "tenantId");
  t.active = j.value("active", false);
  for (const auto& d : j.value("devices", Json::array())) t.devices.push_back(device_from_json(d));
  return t;
}

Engine::Engine(DispatchFn dispatch, std::shared_ptr<Metrics> metrics)
    : dispatch_(std::move(dispatch)), metrics_(std::move(metrics)) {}

void Engine::put_device(DeviceConfig config) {
  auto id = config.device_id;
  Device d;
  d.config = std::move(config);
  devices_[id] = std::move(d);
}

void Engine::remove_device(const std::string& device_id) { devices_.erase(device_id); }

void Engine::set_active(const std::string& device_id, bool active) {
  auto it = devices_.find(device_id);
  if (it == devices_.end()) throw Error(Errc::NotFound, "device " + device_id);
  auto& d = it->second;
  d.config.active = active;
  if (!active) {
    d.armed = false;
    d.deadline.reset();
    d.last_message.reset();
    d.silent = false;
  }
}

const DeviceConfig& Engine::device(const std::string& device_id) const {
  auto it = devices_.find(device_id);
  if (it == devices_.end()) throw Error(Errc::NotFound, "device " + device_id);
  return it->second.config;
}

TimerState Engine::timer(const std::string& device_id) const {
  auto it = devices_.find(device_id);
  if (it == devices_.end()) throw Error(Errc::NotFound, "device " + device_id);
  return {it->second.armed, it->second.deadline};
}

std::vector<std::string> Engine::device_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : devices_) out.push_back(id);
  return out;
}

bool Engine::on_message(const std::string& device_id, TimestampNs t, const std::map<std::string, Json>& fields) {
  advance_to(t);
  auto it = devices_.find(device_id);
  if (it == devices_.end() || !it->second.config.active) return false;
  auto& d = it->second;
  absorb_fields(d.config.required_values, fields);

  bool changed = false;
  if (d.last_message && !d.silent) {
    const auto interval = learn_interval(t - *d.last_message);
    changed = interval != d.config.learned_interval;
    d.config.learned_interval = interval;
  }
  d.last_message = t;
  d.silent = false;
  d.armed = true;
  if (d.config.learned_interval) {
    d.deadline = t + *d.config.learned_interval;
  } else {
    d.deadline.reset();
  }
  return changed;
}

void Engine::advance_to(TimestampNs t) {
  for (;;) {
    Device* next = nullptr;
    for (auto& [_, d] : devices_)
      if (d.deadline && *d.deadline <= t && (!next || *d.deadline < *next->deadline)) next = &d;
    if (!next) return;
    fire(*next, *next->deadline);
  }
}

std::optional<TimestampNs> Engine::next_deadline() const {
  std::optional<TimestampNs> out;
  for (const auto& [_, d] : devices_)
    if (d.deadline && (!out || *d.deadline < *out)) out = d.deadline;
  return out;
}

void Engine::fire(Device& d, TimestampNs at) {
  d.silent = true;
  d.deadline = at + *d.config.learned_interval;
  Dispatch out{d.config.device_id, d.config.ml_input_topic, at, {}};
  try {
    out.bytes = build_input(d.config.required_values, at);
  } catch (const Error& e) {
    if (e.code() == Errc::MissingLastValue) metrics_->add(metric::kMissingLastValue);
    return;
  }
  metrics_->add(metric::kDispatched);
  dispatch_(out);
}

}  // namespace twinforge::watchdog
