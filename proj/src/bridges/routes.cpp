#include <cmath>

#include "twinforge/bridges/bridges.hpp"
#include "twinforge/bus/dead_letter.hpp"
#include "twinforge/core/error.hpp"
#include "twinforge/ml/runtime.hpp"

namespace twinforge::bridges {

namespace {

constexpr const char* kRoutePrefix = "route/";

std::string required_string(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty())
    throw Error(Errc::InvalidArgument, std::string("missing string field '") + key + "'");
  return j[key].get<std::string>();
}

}  // namespace

std::string_view to_string(RouteMode m) noexcept { return m == RouteMode::Update ? "update" : "future_copy"; }

RouteMode parse_route_mode(std::string_view text) {
  if (text == "update") return RouteMode::Update;
  if (text == "future_copy") return RouteMode::FutureCopy;
  throw Error(Errc::InvalidArgument, "unknown route mode '" + std::string(text) + "'");
}

Json to_json(const PredictionRoute& r) {
  Json j{{"routeId", r.route_id},
         {"sourceTopic", r.source_topic},
         {"targetQueue", r.target_queue},
         {"active", r.active},
         {"ditto_message", r.ditto_message},
         {"mode", to_string(r.mode)}};
  if (r.mode == RouteMode::FutureCopy) j["horizon_s"] = r.horizon_s;
  return j;
}

void validate_route(const PredictionRoute& r) {
  if (r.route_id.empty() || r.source_topic.empty() || r.target_queue.empty())
    throw Error(Errc::InvalidArgument, "route needs routeId, sourceTopic and targetQueue");
  if (!std::isfinite(r.horizon_s) || r.horizon_s < 0) throw Error(Errc::InvalidArgument, "horizon_s must be >= 0");
  const auto top = max_placeholder(r.ditto_message);
  if (top && *top > 1'000'000) throw Error(Errc::InvalidArgument, "placeholder index too large");
  // Try the template with dummy outputs so a broken template fails now
  // rather than on every prediction.
  const auto probe = substitute(r.ditto_message, std::vector<double>(top ? *top + 1 : 0, 0.0));
  if (parse_topic(probe.topic).action != Action::Modify)
    throw Error(Errc::InvalidResult, "route templates must be modify commands");
}

PredictionRoute route_from_json(const Json& j) {
  PredictionRoute r;
  r.route_id = required_string(j, "routeId");
  r.source_topic = required_string(j, "sourceTopic");
  r.target_queue = required_string(j, "targetQueue");
  r.active = j.value("active", true);
  if (!j.contains("ditto_message")) throw Error(Errc::InvalidArgument, "missing 'ditto_message'");
  r.ditto_message = j["ditto_message"];
  r.mode = parse_route_mode(j.value("mode", std::string("update")));
  const Json h = j.value("horizon_s", Json(0.0));
  if (!h.is_number()) throw Error(Errc::InvalidArgument, "horizon_s must be a number");
  r.horizon_s = h.get<double>();
  validate_route(r);
  return r;
}

struct Routes::Loop {
  std::mutex mu;
  PredictionRoute route;
  std::optional<bus::Subscription> sub;
  std::atomic<bool> stopping{false};
  std::thread thread;
};

Routes::Routes(bus::Bus& bus, Options options)
    : bus_(bus),
      options_(std::move(options)),
      kv_((std::filesystem::create_directories(options_.data_dir), options_.data_dir / "routes.kv"),
          options_.durability) {
  for (const auto& [_, value] : kv_.scan(kRoutePrefix)) {
    auto l = std::make_shared<Loop>();
    l->route = route_from_json(value);
    loops_[l->route.route_id] = l;
  }
}

Routes::~Routes() { stop(); }

void Routes::create(const PredictionRoute& route) {
  validate_route(route);
  auto l = std::make_shared<Loop>();
  l->route = route;
  std::lock_guard lock(mu_);
  if (loops_.count(route.route_id)) throw Error(Errc::DuplicateId, "route " + route.route_id);
  kv_.put(kRoutePrefix + store::escape_name(route.route_id), to_json(route));
  loops_[route.route_id] = l;
  bus_.create_queue(route.target_queue);
  if (started_ && route.active) launch(l);
}

std::shared_ptr<Routes::Loop> Routes::find(const std::string& route_id) const {
  std::lock_guard lock(mu_);
  auto it = loops_.find(route_id);
  if (it == loops_.end()) throw Error(Errc::NotFound, "route " + route_id);
  return it->second;
}

PredictionRoute Routes::get(const std::string& route_id) const {
  auto l = find(route_id);
  std::lock_guard lock(l->mu);
  return l->route;
}

std::vector<PredictionRoute> Routes::list() const {
  std::vector<std::shared_ptr<Loop>> all;
  {
    std::lock_guard lock(mu_);
    for (const auto& [_, l] : loops_) all.push_back(l);
  }
  std::vector<PredictionRoute> out;
  for (const auto& l : all) {
    std::lock_guard lock(l->mu);
    out.push_back(l->route);
  }
  return out;
}

void Routes::remove(const std::string& route_id) {
  std::shared_ptr<Loop> l;
  {
    std::lock_guard lock(mu_);
    auto it = loops_.find(route_id);
    if (it == loops_.end()) throw Error(Errc::NotFound, "route " + route_id);
    l = it->second;
    kv_.erase(kRoutePrefix + store::escape_name(route_id));
    loops_.erase(it);
  }
  halt(l);
}

void Routes::set_active(const std::string& route_id, bool active) {
  auto l = find(route_id);
  if (!active) halt(l);
  std::lock_guard lock(mu_);
  {
    std::lock_guard llock(l->mu);
    l->route.active = active;
    kv_.put(kRoutePrefix + store::escape_name(route_id), to_json(l->route));
  }
  if (active && started_) launch(l);
}

void Routes::start() {
  std::lock_guard lock(mu_);
  started_ = true;
  for (auto& [_, l] : loops_) {
    bool active;
    {
      std::lock_guard llock(l->mu);
      active = l->route.active;
    }
    if (active) launch(l);
  }
}

void Routes::stop() {
  std::vector<std::shared_ptr<Loop>> all;
  {
    std::lock_guard lock(mu_);
    started_ = false;
    for (auto& [_, l] : loops_) all.push_back(l);
  }
  for (auto& l : all) halt(l);
}

void Routes::launch(const std::shared_ptr<Loop>& l) {
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

void Routes::halt(const std::shared_ptr<Loop>& l) {
  l->stopping = true;
  if (l->thread.joinable()) l->thread.join();
}

std::size_t Routes::pump(const std::string& route_id, std::chrono::milliseconds wait) {
  return pump_one(*find(route_id), wait);
}

std::size_t Routes::pump_one(Loop& l, std::chrono::milliseconds wait) {
  std::lock_guard lock(l.mu);
  const auto& r = l.route;
  if (!r.active) return 0;
  try {
    if (!l.sub) l.sub.emplace(bus_.subscribe(r.source_topic, "route-" + r.route_id));
    auto batch = l.sub->poll_batch(256, wait);
    for (const auto& m : batch) {
      try {
        const auto envelope = substitute(r.ditto_message, ml::decode_output(m.payload));
        auto headers = bus::propagate(m.headers);
        headers[header::kOriginator] = route_originator(r.route_id);
        headers[kRouteHeader] = r.route_id;
        headers[kModeHeader] = std::string(to_string(r.mode));
        if (r.mode == RouteMode::FutureCopy) headers[kHorizonHeader] = Json(r.horizon_s).dump();
        bus_.enqueue(r.target_queue, headers, to_json(envelope).dump());
      } catch (const Error& e) {
        if (e.code() == Errc::Unavailable) throw;
        bus::dead_letter(bus_, *options_.metrics, "route/" + r.route_id, e.what(), m.headers, m.payload);
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

ThingId copy_future(registry::Registry& registry, const ThingId& source, const Envelope& envelope, double horizon_s,
                    const std::string& subject) {
  const ThingId copy{source.ns, source.name + kPredictedSuffix};
  bus::Headers headers = envelope.headers;
  headers[header::kOriginator] = subject;
  if (!registry.exists(copy)) {
    const auto src = registry.get(source);
    TwinRecord proto;
    proto.thing_id = copy;
    proto.policy_id = src.policy_id;
    proto.features = src.features;
    for (const auto& [k, v] : src.attributes.items())
      if (!managed::is_managed_key(k)) proto.attributes[k] = v;
    proto.attributes["predicted_horizon_s"] = horizon_s;
    proto.attributes["predicted_from"] = source.str();
    try {
      registry.create_twin(proto, std::nullopt, headers);
    } catch (const Error& e) {
      if (e.code() != Errc::DuplicateId) throw;  // a concurrent consumer got there first
    }
  }
  Envelope retargeted = envelope;
  const auto parts = parse_topic(envelope.topic);
  retargeted.topic = make_topic(copy, parts.channel, parts.action);
  retargeted.headers = headers;
  registry.update(copy, retargeted, subject);
  return copy;
}

RouteConsumer::RouteConsumer(bus::Bus& bus, registry::Registry& registry, Options options)
    : bus_(bus), registry_(registry), options_(std::move(options)) {}

RouteConsumer::~RouteConsumer() { stop(); }

void RouteConsumer::watch(const std::string& queue) {
  std::lock_guard lock(mu_);
  queues_.insert(queue);
}

std::vector<std::string> RouteConsumer::queues() const {
  std::lock_guard lock(mu_);
  return {queues_.begin(), queues_.end()};
}

void RouteConsumer::start() {
  if (running_.exchange(true)) return;
  worker_ = std::thread([this] {
    while (running_) {
      try {
        if (queues().empty()) {
          std::this_thread::sleep_for(std::chrono::milliseconds(20));
        } else {
          pump(std::chrono::milliseconds(100));
        }
      } catch (const Error&) {
        std::this_thread::sleep_for(options_.retry_interval);
      }
    }
  });
}

void RouteConsumer::stop() {
  if (!running_.exchange(false)) return;
  worker_.join();
}

void RouteConsumer::apply(const bus::Message& m) {
  auto envelope = envelope_from_json(Json::parse(m.payload));
  for (const auto& [k, v] : bus::propagate(m.headers)) envelope.headers[k] = v;
  auto it = m.headers.find(header::kOriginator);
  const std::string subject = it != m.headers.end() ? it->second : "ml-bridge";
  const auto thing = parse_topic(envelope.topic).thing_id;
  auto mode = m.headers.find(kModeHeader);
  if (mode != m.headers.end() && parse_route_mode(mode->second) == RouteMode::FutureCopy) {
    double horizon = 0;
    if (auto h = m.headers.find(kHorizonHeader); h != m.headers.end()) horizon = std::stod(h->second);
    copy_future(registry_, thing, envelope, horizon, subject);
  } else {
    registry_.update(thing, envelope, subject);
  }
  options_.metrics->add(metric::kRouteApplied);
}

std::size_t RouteConsumer::pump(std::chrono::milliseconds wait) {
  std::size_t applied = 0;
  const auto names = queues();
  for (std::size_t pass = 0; pass < 2; ++pass) {
    for (const auto& q : names) {
      // First pass drains without blocking; the second waits once when
      // nothing was found anywhere.
      const auto timeout = pass == 0 ? std::chrono::milliseconds(0) : wait;
      for (std::size_t i = 0; i < 256; ++i) {
        auto d = bus_.dequeue(q, timeout);
        if (!d) break;
        try {
          apply(d->message());
        } catch (const Error& e) {
          if (e.code() == Errc::Unavailable) throw;  // delivery goes back to the queue
          bus::dead_letter(bus_, *options_.metrics, "route-consumer", e.what(), d->message().headers,
                           d->message().payload);
        } catch (const std::exception& e) {
          bus::dead_letter(bus_, *options_.metrics, "route-consumer", e.what(), d->message().headers,
                           d->message().payload);
        }
        d->ack();
        ++applied;
        if (pass == 1) break;
      }
      if (pass == 1) break;
    }
    if (applied) break;
  }
  return applied;
}

}  // namespace twinforge::bridges
