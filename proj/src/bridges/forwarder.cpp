#include <algorithm>
#include <set>

#include "twinforge/bridges/bridges.hpp"
#include "twinforge/bus/dead_letter.hpp"
#include "twinforge/core/error.hpp"
#include "twinforge/gateway/gateway.hpp"

namespace twinforge::bridges {

namespace {

constexpr const char* kForwarderPrefix = "forwarder/";

std::string required_string(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty())
    throw Error(Errc::InvalidArgument, std::string("missing string field '") + key + "'");
  return j[key].get<std::string>();
}

}  // namespace

Json to_json(const ForwarderConfig& f) {
  Json devices = Json::array();
  for (const auto& d : f.devices) {
    Json specs = Json::array();
    for (const auto& s : d.required_values) specs.push_back({{"format", to_string(s.format)}, {"name", s.name}});
    devices.push_back(
        {{"deviceId", d.device_id}, {"mlInputTopic", d.ml_input_topic}, {"required_values", specs}, {"active", d.active}});
  }
  return {{"tenantId", f.tenant_id}, {"active", f.active}, {"devices", devices}};
}

ForwarderConfig forwarder_from_json(const Json& j) {
  ForwarderConfig f;
  f.tenant_id = required_string(j, "tenantId");
  f.active = j.value("active", true);
  std::set<std::string> seen;
  for (const auto& d : j.value("devices", Json::array())) {
    ForwarderDevice dev;
    dev.device_id = required_string(d, "deviceId");
    dev.ml_input_topic = required_string(d, "mlInputTopic");
    dev.active = d.value("active", true);
    dev.required_values = specs_from_json(d.value("required_values", Json::array()));
    // The forwarder keeps no last values.
    for (auto& s : dev.required_values) s.last_value = nullptr;
    if (!seen.insert(dev.device_id).second) throw Error(Errc::DuplicateDevice, dev.device_id);
    f.devices.push_back(std::move(dev));
  }
  return f;
}

std::string forward_input(const ForwarderDevice& device, const Envelope& message, TimestampNs time) {
  const auto fields = message_fields(message);
  std::vector<double> values;
  values.reserve(device.required_values.size());
  for (const auto& s : device.required_values) {
    if (s.is_time()) {
      values.push_back(time_field(s.name, time));
      continue;
    }
    auto it = fields.find(s.name);
    if (it == fields.end() || !it->second.is_number())
      throw Error(Errc::MappingFailed, "message has no numeric value for '" + s.name + "'");
    values.push_back(it->second.get<double>());
  }
  try {
    return encode_values(schema_of(device.required_values), values);
  } catch (const Error& e) {
    throw Error(Errc::MappingFailed, e.what());
  }
}

struct Forwarders::Loop {
  std::mutex mu;
  ForwarderConfig config;
  std::optional<bus::Subscription> sub;
  std::atomic<bool> stopping{false};
  std::thread thread;
};

Forwarders::Forwarders(bus::Bus& bus, Options options)
    : bus_(bus),
      options_(std::move(options)),
      kv_((std::filesystem::create_directories(options_.data_dir), options_.data_dir / "forwarders.kv"),
          options_.durability) {
  for (const auto& [_, value] : kv_.scan(kForwarderPrefix)) {
    auto l = std::make_shared<Loop>();
    l->config = forwarder_from_json(value);
    loops_[l->config.tenant_id] = l;
  }
}

Forwarders::~Forwarders() { stop(); }

void Forwarders::create(const ForwarderConfig& config) {
  auto checked = forwarder_from_json(to_json(config));
  for (const auto& d : checked.devices) {
    for (const auto& s : d.required_values)
      if (s.is_time()) time_field(s.name, 0);
  }
  auto l = std::make_shared<Loop>();
  l->config = checked;
  std::lock_guard lock(mu_);
  if (loops_.count(config.tenant_id)) throw Error(Errc::DuplicateId, "forwarder " + config.tenant_id);
  kv_.put(kForwarderPrefix + store::escape_name(config.tenant_id), to_json(checked));
  loops_[config.tenant_id] = l;
  if (started_ && checked.active) launch(l);
}

std::shared_ptr<Forwarders::Loop> Forwarders::find(const std::string& tenant_id) const {
  std::lock_guard lock(mu_);
  auto it = loops_.find(tenant_id);
  if (it == loops_.end()) throw Error(Errc::NotFound, "forwarder " + tenant_id);
  return it->second;
}

ForwarderConfig Forwarders::get(const std::string& tenant_id) const {
  auto l = find(tenant_id);
  std::lock_guard lock(l->mu);
  return l->config;
}

std::vector<ForwarderConfig> Forwarders::list() const {
  std::vector<std::shared_ptr<Loop>> all;
  {
    std::lock_guard lock(mu_);
    for (const auto& [_, l] : loops_) all.push_back(l);
  }
  std::vector<ForwarderConfig> out;
  for (const auto& l : all) {
    std::lock_guard lock(l->mu);
    out.push_back(l->config);
  }
  return out;
}

void Forwarders::remove(const std::string& tenant_id) {
  std::shared_ptr<Loop> l;
  {
    std::lock_guard lock(mu_);
    auto it = loops_.find(tenant_id);
    if (it == loops_.end()) throw Error(Errc::NotFound, "forwarder " + tenant_id);
    l = it->second;
    kv_.erase(kForwarderPrefix + store::escape_name(tenant_id));
    loops_.erase(it);
  }
  halt(l);
}

void Forwarders::set_active(const std::string& tenant_id, bool active) {
  auto l = find(tenant_id);
  if (!active) halt(l);
  std::lock_guard lock(mu_);
  {
    std::lock_guard llock(l->mu);
    l->config.active = active;
    kv_.put(kForwarderPrefix + store::escape_name(tenant_id), to_json(l->config));
  }
  if (active && started_) launch(l);
}

void Forwarders::start() {
  std::lock_guard lock(mu_);
  started_ = true;
  for (auto& [_, l] : loops_) {
    bool active;
    {
      std::lock_guard llock(l->mu);
      active = l->config.active;
    }
    if (active) launch(l);
  }
}

void Forwarders::stop() {
  std::vector<std::shared_ptr<Loop>> all;
  {
    std::lock_guard lock(mu_);
    started_ = false;
    for (auto& [_, l] : loops_) all.push_back(l);
  }
  for (auto& l : all) halt(l);
}

void Forwarders::launch(const std::shared_ptr<Loop>& l) {
  if (l->thread.joinable()) return;
  l->stopping = false;
  l->thread = std::thread([this, l] {
    while (!l->stopping) {
      try {
        pump_one(*l, std::chrono::milliseconds(100));
      } catch (const Error&) {
        std::this_thread::sleep_for(options_.retry_interval);
      }
    }
  });
}

void Forwarders::halt(const std::shared_ptr<Loop>& l) {
  l->stopping = true;
  if (l->thread.joinable()) l->thread.join();
}

std::size_t Forwarders::pump(const std::string& tenant_id, std::chrono::milliseconds wait) {
  return pump_one(*find(tenant_id), wait);
}

std::size_t Forwarders::pump_one(Loop& l, std::chrono::milliseconds wait) {
  std::lock_guard lock(l.mu);
  const auto& cfg = l.config;
  if (!cfg.active) return 0;
  try {
    if (!l.sub) l.sub.emplace(bus_.subscribe(gateway::telemetry_topic(cfg.tenant_id), "forwarder-" + cfg.tenant_id));
    auto batch = l.sub->poll_batch(256, wait);
    for (const auto& m : batch) {
      auto dev_header = m.headers.find(header::kDeviceId);
      const ForwarderDevice* dev = nullptr;
      if (dev_header != m.headers.end())
        for (const auto& d : cfg.devices)
          if (d.device_id == dev_header->second && d.active) dev = &d;
      if (dev) {
        try {
          const auto envelope = envelope_from_json(Json::parse(m.payload));
          const auto time = bus::header_ns(m.headers, header::kTimestamp, options_.clock->now());
          auto headers = bus::propagate(m.headers);
          bus_.publish(dev->ml_input_topic, headers, forward_input(*dev, envelope, time));
          options_.metrics->add(metric::kForwarded);
        } catch (const Error& e) {
          if (e.code() == Errc::Unavailable) throw;
          bus::dead_letter(bus_, *options_.metrics, "forwarder", e.what(), m.headers, m.payload);
        } catch (const Json::exception& e) {
          bus::dead_letter(bus_, *options_.metrics, "forwarder", e.what(), m.headers, m.payload);
        }
      }
      l.sub->seek(m.offset + 1);
      l.sub->commit();
    }
    return batch.size();
  } catch (const Error&) {
    l.sub.reset();
    throw;
  }
}

}  // namespace twinforge::bridges
