#include "twinforge/watchdog/watchdog.hpp"

#include <algorithm>
#include <set>

#include "twinforge/bus/dead_letter.hpp"
#include "twinforge/core/error.hpp"
#include "twinforge/gateway/gateway.hpp"

namespace twinforge::watchdog {

namespace {
constexpr const char* kTenantPrefix = "wd-tenant/";
}

struct Watchdog::Supervisor {
  std::mutex mu;
  std::unique_ptr<Engine> engine;
  std::atomic<bool> stopping{false};
  std::thread thread;
};

Watchdog::Watchdog(bus::Bus& bus, Options options)
    : bus_(bus),
      options_(std::move(options)),
      kv_((std::filesystem::create_directories(options_.data_dir), options_.data_dir / "watchdog.kv"),
          options_.durability) {
  for (const auto& [_, value] : kv_.scan(kTenantPrefix)) {
    auto t = tenant_from_json(value);
    tenants_[t.tenant_id] = std::move(t);
  }
}

Watchdog::~Watchdog() { stop(); }

void Watchdog::start() {
  std::lock_guard lock(mu_);
  started_ = true;
  for (const auto& [id, t] : tenants_)
    if (t.active) launch(id);
}

void Watchdog::stop() {
  std::lock_guard lock(mu_);
  started_ = false;
  std::vector<std::string> ids;
  for (const auto& [id, _] : supervisors_) ids.push_back(id);
  for (const auto& id : ids) halt(id);
}

TenantConfig& Watchdog::find(const std::string& tenant_id) {
  auto it = tenants_.find(tenant_id);
  if (it == tenants_.end()) throw Error(Errc::UnknownTenant, "watchdog tenant " + tenant_id);
  return it->second;
}

const TenantConfig& Watchdog::find(const std::string& tenant_id) const {
  auto it = tenants_.find(tenant_id);
  if (it == tenants_.end()) throw Error(Errc::UnknownTenant, "watchdog tenant " + tenant_id);
  return it->second;
}

void Watchdog::persist(const TenantConfig& t) { kv_.put(kTenantPrefix + store::escape_name(t.tenant_id), to_json(t)); }

void Watchdog::create_tenant(const TenantConfig& tenant) {
  if (tenant.tenant_id.empty()) throw Error(Errc::InvalidArgument, "empty tenant id");
  std::set<std::string> ids;
  for (const auto& d : tenant.devices)
    if (!ids.insert(d.device_id).second) throw Error(Errc::DuplicateDevice, d.device_id);
  std::lock_guard lock(mu_);
  if (tenants_.count(tenant.tenant_id)) throw Error(Errc::DuplicateId, "watchdog tenant " + tenant.tenant_id);
  persist(tenant);
  tenants_[tenant.tenant_id] = tenant;
  if (started_ && tenant.active) launch(tenant.tenant_id);
}

TenantConfig Watchdog::tenant(const std::string& tenant_id) const {
  std::lock_guard lock(mu_);
  auto t = find(tenant_id);
  if (auto s = supervisors_.find(tenant_id); s != supervisors_.end()) {
    std::lock_guard elock(s->second->mu);
    for (auto& d : t.devices)
      if (s->second->engine->has_device(d.device_id)) d = s->second->engine->device(d.device_id);
  }
  return t;
}

std::vector<TenantConfig> Watchdog::tenants() const {
  std::vector<std::string> ids;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, _] : tenants_) ids.push_back(id);
  }
  std::vector<TenantConfig> out;
  for (const auto& id : ids) {
    try {
      out.push_back(tenant(id));
    } catch (const Error&) {
    }
  }
  return out;
}

void Watchdog::delete_tenant(const std::string& tenant_id) {
  std::lock_guard lock(mu_);
  find(tenant_id);
  halt(tenant_id);
  kv_.erase(kTenantPrefix + store::escape_name(tenant_id));
  tenants_.erase(tenant_id);
}

void Watchdog::set_tenant_active(const std::string& tenant_id, bool active) {
  std::lock_guard lock(mu_);
  auto& t = find(tenant_id);
  if (!active) halt(tenant_id);  // folds learned state back into t first
  t.active = active;
  persist(t);
  if (active && started_) launch(tenant_id);
}

void Watchdog::add_device(const std::string& tenant_id, const DeviceConfig& device) {
  if (device.device_id.empty() || device.ml_input_topic.empty())
    throw Error(Errc::InvalidArgument, "device needs deviceId and mlInputTopic");
  std::lock_guard lock(mu_);
  auto& t = find(tenant_id);
  for (const auto& d : t.devices)
    if (d.device_id == device.device_id) throw Error(Errc::DuplicateDevice, device.device_id);
  t.devices.push_back(device);
  persist(t);
  if (auto s = supervisors_.find(tenant_id); s != supervisors_.end()) {
    std::lock_guard elock(s->second->mu);
    s->second->engine->put_device(device);
  }
}

DeviceConfig Watchdog::device(const std::string& tenant_id, const std::string& device_id) const {
  for (auto& d : tenant(tenant_id).devices)
    if (d.device_id == device_id) return d;
  throw Error(Errc::NotFound, "watchdog device " + device_id);
}

Json Watchdog::device_json(const std::string& tenant_id, const std::string& device_id) const {
  auto d = device(tenant_id, device_id);
  std::optional<TimerState> timer = TimerState{};
  std::lock_guard lock(mu_);
  if (auto s = supervisors_.find(tenant_id); s != supervisors_.end()) {
    std::lock_guard elock(s->second->mu);
    if (s->second->engine->has_device(device_id)) timer = s->second->engine->timer(device_id);
  }
  return to_json(d, timer);
}

void Watchdog::delete_device(const std::string& tenant_id, const std::string& device_id) {
  std::lock_guard lock(mu_);
  auto& t = find(tenant_id);
  auto it = std::find_if(t.devices.begin(), t.devices.end(),
                         [&](const DeviceConfig& d) { return d.device_id == device_id; });
  if (it == t.devices.end()) throw Error(Errc::NotFound, "watchdog device " + device_id);
  t.devices.erase(it);
  persist(t);
  if (auto s = supervisors_.find(tenant_id); s != supervisors_.end()) {
    std::lock_guard elock(s->second->mu);
    s->second->engine->remove_device(device_id);
  }
}

void Watchdog::set_device_active(const std::string& tenant_id, const std::string& device_id, bool active) {
  std::lock_guard lock(mu_);
  auto& t = find(tenant_id);
  auto it = std::find_if(t.devices.begin(), t.devices.end(),
                         [&](const DeviceConfig& d) { return d.device_id == device_id; });
  if (it == t.devices.end()) throw Error(Errc::NotFound, "watchdog device " + device_id);
  it->active = active;
  persist(t);
  if (auto s = supervisors_.find(tenant_id); s != supervisors_.end()) {
    std::lock_guard elock(s->second->mu);
    s->second->engine->set_active(device_id, active);
  }
}

bool Watchdog::supervising(const std::string& tenant_id) const {
  std::lock_guard lock(mu_);
  return supervisors_.count(tenant_id) != 0;
}

std::size_t Watchdog::supervisor_count() const {
  std::lock_guard lock(mu_);
  return supervisors_.size();
}

void Watchdog::launch(const std::string& tenant_id) {
  if (supervisors_.count(tenant_id)) return;
  auto sup = std::make_unique<Supervisor>();
  sup->engine = std::make_unique<Engine>(
      [this](const Dispatch& d) {
        try {
          bus_.publish(d.topic,
                       {{header::kDeviceId, d.device_id},
                        {header::kTimestamp, std::to_string(d.at)},
                        {header::kOriginator, kOriginator}},
                       d.bytes);
        } catch (const Error&) {
          // Bus down: this tick's input is lost, the timer keeps running.
        }
      },
      options_.metrics);
  for (const auto& d : find(tenant_id).devices) sup->engine->put_device(d);

  Supervisor* s = sup.get();
  s->thread = std::thread([this, s, tenant_id] {
    const auto topic = gateway::telemetry_topic(tenant_id);
    std::optional<bus::Subscription> sub;
    while (!s->stopping) {
      try {
        if (!sub) sub.emplace(bus_.subscribe_latest(topic));
        auto wait = options_.tick;
        {
          std::lock_guard elock(s->mu);
          if (auto next = s->engine->next_deadline()) {
            const auto until = std::max<TimestampNs>(0, *next - options_.clock->now()) / 1'000'000;
            wait = std::min(wait, std::chrono::milliseconds(until));
          }
        }
        auto m = sub->poll(wait);
        const auto now = options_.clock->now();
        std::optional<DeviceConfig> learned;
        {
          std::lock_guard elock(s->mu);
          s->engine->advance_to(now);
          if (m) {
            auto dev = m->headers.find(header::kDeviceId);
            if (dev != m->headers.end()) {
              std::map<std::string, Json> fields;
              try {
                fields = message_fields(envelope_from_json(Json::parse(m->payload)));
              } catch (const std::exception&) {
              }
              if (s->engine->on_message(dev->second, now, fields)) learned = s->engine->device(dev->second);
            }
          }
        }
        // halt() joins while holding mu_, so never block on it here.
        while (learned && !s->stopping) {
          std::unique_lock lock(mu_, std::try_to_lock);
          if (!lock) {
            std::this_thread::yield();
            continue;
          }
          if (auto it = tenants_.find(tenant_id); it != tenants_.end()) {
            for (auto& d : it->second.devices)
              if (d.device_id == learned->device_id) d.learned_interval = learned->learned_interval;
            persist(it->second);
          }
          learned.reset();
        }
      } catch (const Error&) {
        sub.reset();
        std::this_thread::sleep_for(options_.tick);
      }
    }
  });
  supervisors_[tenant_id] = std::move(sup);
}

void Watchdog::halt(const std::string& tenant_id) {
  auto it = supervisors_.find(tenant_id);
  if (it == supervisors_.end()) return;
  auto sup = std::move(it->second);
  supervisors_.erase(it);
  sup->stopping = true;
  sup->thread.join();
  if (auto t = tenants_.find(tenant_id); t != tenants_.end()) {
    for (auto& d : t->second.devices)
      if (sup->engine->has_device(d.device_id)) d = sup->engine->device(d.device_id);
    persist(t->second);
  }
}

}  // namespace twinforge::watchdog
