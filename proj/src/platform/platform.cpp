#include "twinforge/platform/platform.hpp"

#include <algorithm>

#include "twinforge/core/error.hpp"

namespace twinforge::platform {

std::string_view to_string(Service s) noexcept {
  switch (s) {
    case Service::Gateway: return "gateway";
    case Service::Registry: return "registry";
    case Service::Bus: return "bus";
    case Service::Timeseries: return "timeseries";
    case Service::RouteConsumer: return "route-consumer";
  }
  return "";
}

Service parse_service(std::string_view text) {
  for (auto s : kServices)
    if (to_string(s) == text) return s;
  throw Error(Errc::InvalidArgument, "unknown service '" + std::string(text) + "'");
}

Platform::Platform(Options options) : options_(std::move(options)) {
  for (const char* name : {metric::kIngested, metric::kStored, metric::kDispatched, metric::kDeadLettered,
                           metric::kRecoveryEvents, metric::kAuthFailures})
    metrics_->counter(name);
  const auto& dir = options_.data_dir;
  const auto d = options_.durability;
  bus_ = std::make_unique<bus::Bus>(bus::Bus::Options{dir / "bus", d, 16u << 20, options_.clock});
  registry_ = std::make_unique<registry::Registry>(
      *bus_, registry::Registry::Options{dir / "registry", registry::kEventTopic, d, metrics_});
  gateway_ = std::make_unique<gateway::Gateway>(*bus_,
                                                gateway::Gateway::Options{dir / "gateway", d, metrics_, options_.clock});
  watchdog_ = std::make_unique<watchdog::Watchdog>(
      *bus_, watchdog::Watchdog::Options{dir / "watchdog", d, metrics_, options_.clock, options_.watchdog_tick});
  runtime_ =
      std::make_unique<ml::Runtime>(*bus_, ml::Runtime::Options{dir / "ml", d, metrics_, options_.retry_interval});
  forwarders_ = std::make_unique<bridges::Forwarders>(
      *bus_, bridges::Forwarders::Options{dir / "bridges", d, metrics_, options_.clock, options_.retry_interval});
  routes_ = std::make_unique<bridges::Routes>(
      *bus_, bridges::Routes::Options{dir / "bridges", d, metrics_, options_.retry_interval});
  open_timeseries();
  open_route_consumer();
  for (const auto& t : gateway_->list_tenants()) connect(t);
}

Platform::~Platform() { stop(); }

void Platform::connect(const std::string& tenant_id) {
  registry::TelemetryConnection::Options o;
  o.tenant = tenant_id;
  o.metrics = metrics_;
  o.retry_interval = options_.retry_interval;
  auto c = std::make_unique<registry::TelemetryConnection>(*bus_, *registry_, o);
  if (running_) c->start();
  connections_[tenant_id] = std::move(c);
}

void Platform::open_timeseries() {
  store_ = std::make_shared<timeseries::Store>(options_.data_dir / "timeseries", options_.durability);
  timeseries::Sink::Options o;
  o.metrics = metrics_;
  o.clock = options_.clock;
  o.retry_interval = options_.retry_interval;
  sink_ = std::make_unique<timeseries::Sink>(*bus_, *store_, o);
  if (running_) sink_->start();
}

void Platform::open_route_consumer() {
  consumer_ = std::make_unique<bridges::RouteConsumer>(
      *bus_, *registry_, bridges::RouteConsumer::Options{metrics_, options_.retry_interval});
  for (const auto& r : routes_->list()) consumer_->watch(r.target_queue);
  if (running_) consumer_->start();
}

void Platform::start() {
  std::lock_guard lock(mu_);
  if (running_) return;
  running_ = true;
  for (auto& [_, c] : connections_) c->start();
  if (sink_) sink_->start();
  watchdog_->start();
  runtime_->start();
  forwarders_->start();
  routes_->start();
  if (consumer_) consumer_->start();
}

void Platform::stop() {
  std::lock_guard lock(mu_);
  if (!running_) return;
  running_ = false;
  forwarders_->stop();
  watchdog_->stop();
  runtime_->stop();
  routes_->stop();
  if (consumer_) consumer_->stop();
  for (auto& [_, c] : connections_) c->stop();
  if (sink_) sink_->stop();
}

void Platform::create_tenant(const std::string& tenant_id, const gateway::PayloadMapper& mapper) {
  std::lock_guard lock(mu_);
  gateway_->create_tenant(tenant_id, mapper);
  connect(tenant_id);
}

void Platform::delete_tenant(const std::string& tenant_id) {
  std::lock_guard lock(mu_);
  gateway_->delete_tenant(tenant_id);
  connections_.erase(tenant_id);
}

void Platform::create_route(const bridges::PredictionRoute& route) {
  std::lock_guard lock(mu_);
  routes_->create(route);
  if (consumer_) consumer_->watch(route.target_queue);
}

std::shared_ptr<timeseries::Store> Platform::timeseries() const {
  std::lock_guard lock(mu_);
  if (!store_) throw Error(Errc::Unavailable, "time series service is down");
  return store_;
}

void Platform::kill(Service s) {
  std::lock_guard lock(mu_);
  switch (s) {
    case Service::Gateway: gateway_->crash(); break;
    case Service::Registry: registry_->crash(); break;
    case Service::Bus: bus_->crash(); break;
    case Service::Timeseries:
      sink_.reset();
      store_.reset();
      break;
    case Service::RouteConsumer: consumer_.reset(); break;
  }
}

void Platform::restart(Service s) {
  std::lock_guard lock(mu_);
  if (alive(s)) return;
  switch (s) {
    case Service::Gateway: gateway_->recover(); break;
    case Service::Registry: registry_->recover(); break;
    case Service::Bus: bus_->recover(); break;
    case Service::Timeseries: open_timeseries(); break;
    case Service::RouteConsumer: open_route_consumer(); break;
  }
  metrics_->add(metric::kRecoveryEvents);
}

bool Platform::alive(Service s) const {
  std::lock_guard lock(mu_);
  switch (s) {
    case Service::Gateway: return gateway_->available();
    case Service::Registry: return registry_->available();
    case Service::Bus: return bus_->available();
    case Service::Timeseries: return sink_ != nullptr;
    case Service::RouteConsumer: return consumer_ != nullptr;
  }
  return false;
}

namespace {

bool contains(const std::vector<ThingId>& ids, const ThingId& id) {
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

const Json& section(const Json& seed, const char* key) {
  static const Json empty = Json::array();
  auto it = seed.find(key);
  return it == seed.end() ? empty : *it;
}

}  // namespace

void Platform::seed(const Json& seed) {
  std::lock_guard lock(mu_);
  for (const auto& j : section(seed, "policies")) registry_->put_policy(policy_from_json(j));
  for (const auto& j : section(seed, "types")) {
    auto t = twin_from_json(j);
    if (!registry_->exists(t.thing_id)) registry_->create_type(t);
  }
  for (const auto& j : section(seed, "twins")) {
    Json body = j;
    std::optional<ThingId> parent;
    if (body.contains("parent")) {
      parent = parse_thing_id(body["parent"].get<std::string>());
      body.erase("parent");
    }
    auto t = twin_from_json(body);
    if (!registry_->exists(t.thing_id)) registry_->create_twin(t, parent);
  }
  for (const auto& j : section(seed, "links")) {
    const auto parent = parse_thing_id(j.at("parent").get<std::string>());
    const auto child = parse_thing_id(j.at("child").get<std::string>());
    if (!contains(registry_->list_children(parent), child)) registry_->link(parent, child);
  }
  for (const auto& j : section(seed, "instantiate")) {
    const auto id = parse_thing_id(j.at("thingId").get<std::string>());
    if (!registry_->exists(id))
      registry_->instantiate_from_type(parse_thing_id(j.at("type").get<std::string>()), id,
                                       j.at("policyId").get<std::string>());
  }
  for (const auto& j : section(seed, "tenants")) {
    const auto tenant_id = j.at("tenantId").get<std::string>();
    const auto tenants = gateway_->list_tenants();
    if (std::find(tenants.begin(), tenants.end(), tenant_id) == tenants.end())
      create_tenant(tenant_id, gateway::mapper_from_json(j.value("mapper", Json())));
    const auto info = gateway_->tenant(tenant_id);
    for (const auto& d : j.value("devices", Json::array())) {
      const auto device_id = d.at("deviceId").get<std::string>();
      const bool known = std::any_of(info.devices.begin(), info.devices.end(),
                                     [&](const gateway::DeviceInfo& x) { return x.device_id == device_id; });
      if (!known)
        gateway_->register_device(tenant_id, device_id,
                                  {d.at("username").get<std::string>(), d.at("password").get<std::string>()});
    }
  }
  for (const auto& j : section(seed, "watchdog")) {
    auto t = watchdog::tenant_from_json(j);
    const auto all = watchdog_->tenants();
    if (std::none_of(all.begin(), all.end(), [&](const auto& x) { return x.tenant_id == t.tenant_id; }))
      watchdog_->create_tenant(t);
  }
  for (const auto& j : section(seed, "models")) {
    auto m = ml::model_from_json(j);
    const auto all = runtime_->models();
    if (std::none_of(all.begin(), all.end(), [&](const auto& x) { return x.model_id == m.model_id; }))
      runtime_->deploy(m);
  }
  for (const auto& j : section(seed, "forwarders")) {
    auto f = bridges::forwarder_from_json(j);
    const auto all = forwarders_->list();
    if (std::none_of(all.begin(), all.end(), [&](const auto& x) { return x.tenant_id == f.tenant_id; }))
      forwarders_->create(f);
  }
  for (const auto& j : section(seed, "routes")) {
    auto r = bridges::route_from_json(j);
    const auto all = routes_->list();
    if (std::none_of(all.begin(), all.end(), [&](const auto& x) { return x.route_id == r.route_id; }))
      create_route(r);
  }
}

}  // namespace twinforge::platform
