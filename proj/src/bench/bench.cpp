#include "twinforge/bench/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "twinforge/core/error.hpp"
#include "twinforge/core/envelope.hpp"
#include "twinforge/gateway/frame_server.hpp"

namespace twinforge::bench {

namespace fs = std::filesystem;
using namespace std::chrono_literals;

std::string_view to_string(Pipeline p) noexcept { return p == Pipeline::Core ? "core" : "ml"; }

Pipeline parse_pipeline(std::string_view text) {
  if (text == "core") return Pipeline::Core;
  if (text == "ml") return Pipeline::Ml;
  throw Error(Errc::InvalidArgument, "unknown pipeline '" + std::string(text) + "'");
}

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw Error(Errc::InvalidArgument, msg);
}

}  // namespace

Scenario scenario_from_json(const Json& j) {
  require(j.is_object(), "scenario must be an object");
  static const std::set<std::string> known{"pipeline", "sharedSensor", "messages", "period_s", "clients",
                                           "repetitions", "faults", "runs", "duration_s", "faultPeriod_s",
                                           "retry_s", "drainTimeout_s", "seed", "durability"};
  for (const auto& [k, v] : j.items()) require(known.count(k) > 0, "unknown scenario key '" + k + "'");
  Scenario s;
  try {
    if (j.contains("pipeline")) s.pipeline = parse_pipeline(j["pipeline"].get<std::string>());
    s.shared_sensor = j.value("sharedSensor", s.shared_sensor);
    s.messages = j.value("messages", s.messages);
    s.period_s = j.value("period_s", s.period_s);
    if (j.contains("clients")) {
      s.clients = j["clients"].is_array() ? j["clients"].get<std::vector<int>>()
                                          : std::vector<int>{j["clients"].get<int>()};
    }
    s.repetitions = j.value("repetitions", s.repetitions);
    for (const auto& f : j.value("faults", Json::array())) {
      FaultStep step;
      step.service = platform::parse_service(f.at("service").get<std::string>());
      step.at_s = f.value("at_s", step.at_s);
      step.down_s = f.value("down_s", step.down_s);
      s.faults.push_back(step);
    }
    s.runs = j.value("runs", s.runs);
    s.duration_s = j.value("duration_s", s.duration_s);
    s.fault_period_s = j.value("faultPeriod_s", s.fault_period_s);
    s.retry_s = j.value("retry_s", s.retry_s);
    s.drain_timeout_s = j.value("drainTimeout_s", s.drain_timeout_s);
    s.seed = j.value("seed", s.seed);
    if (j.contains("durability")) {
      const auto d = j["durability"].get<std::string>();
      require(d == "write" || d == "sync", "durability must be write or sync");
      s.durability = d == "sync" ? store::Durability::Sync : store::Durability::Write;
    }
  } catch (const Json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("scenario: ") + e.what());
  }
  require(!s.clients.empty(), "clients must not be empty");
  for (int c : s.clients) require(c >= 1, "client counts must be >= 1");
  require(s.messages >= 1, "messages must be >= 1");
  require(s.repetitions >= 1, "repetitions must be >= 1");
  require(s.runs >= 1, "runs must be >= 1");
  require(s.period_s >= 0 && s.retry_s > 0 && s.fault_period_s > 0, "periods must be positive");
  require(s.duration_s > 0 && s.drain_timeout_s > 0, "durations must be positive");
  for (const auto& f : s.faults) {
    require(f.at_s >= 0 && f.down_s >= 0, "fault times must be >= 0");
    require(f.at_s + f.down_s <= s.duration_s, "fault must end within duration_s");
  }
  return s;
}

Json to_json(const Scenario& s) {
  Json faults = Json::array();
  for (const auto& f : s.faults)
    faults.push_back({{"service", platform::to_string(f.service)}, {"at_s", f.at_s}, {"down_s", f.down_s}});
  return {{"pipeline", to_string(s.pipeline)},
          {"sharedSensor", s.shared_sensor},
          {"messages", s.messages},
          {"period_s", s.period_s},
          {"clients", s.clients},
          {"repetitions", s.repetitions},
          {"faults", faults},
          {"runs", s.runs},
          {"duration_s", s.duration_s},
          {"faultPeriod_s", s.fault_period_s},
          {"retry_s", s.retry_s},
          {"drainTimeout_s", s.drain_timeout_s},
          {"seed", s.seed},
          {"durability", s.durability == store::Durability::Sync ? "sync" : "write"}};
}

double percentile(std::vector<double> sorted, double q) {
  if (sorted.empty()) return 0;
  if (!std::is_sorted(sorted.begin(), sorted.end())) std::sort(sorted.begin(), sorted.end());
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - static_cast<double>(lo));
}

LatencyStats latency_stats(std::vector<double> samples_ms) {
  LatencyStats out;
  out.samples = samples_ms.size();
  if (samples_ms.empty()) return out;
  std::sort(samples_ms.begin(), samples_ms.end());
  out.mean_ms = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / static_cast<double>(samples_ms.size());
  out.p50_ms = percentile(samples_ms, 0.5);
  out.p95_ms = percentile(samples_ms, 0.95);
  return out;
}

Reconciliation reconcile(const std::vector<std::int64_t>& sent, const std::vector<std::int64_t>& stored) {
  const std::set<std::int64_t> keys(sent.begin(), sent.end());
  std::map<std::int64_t, std::size_t> seen;
  for (auto k : stored)
    if (keys.count(k)) ++seen[k];
  Reconciliation r;
  r.sent = keys.size();
  r.stored = seen.size();
  r.lost = r.sent - r.stored;
  for (const auto& [k, n] : seen) r.duplicates += n - 1;
  return r;
}

double max_gap(std::vector<double> times_s) {
  if (times_s.size() < 2) return 0;
  std::sort(times_s.begin(), times_s.end());
  double gap = 0;
  for (std::size_t i = 1; i < times_s.size(); ++i) gap = std::max(gap, times_s[i] - times_s[i - 1]);
  return gap;
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "spearman needs two equal series of length >= 2");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<TrendStep> bootstrap_steps(const std::vector<int>& x, const std::vector<std::vector<double>>& samples,
                                       std::mt19937_64& rng, int resamples) {
  require(x.size() == samples.size(), "one sample set per x value");
  auto resample_mean = [&](const std::vector<double>& s) {
    std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
    double sum = 0;
    for (std::size_t i = 0; i < s.size(); ++i) sum += s[pick(rng)];
    return sum / static_cast<double>(s.size());
  };
  std::vector<TrendStep> out;
  for (std::size_t i = 1; i < x.size(); ++i) {
    const auto& a = samples[i - 1];
    const auto& b = samples[i];
    require(!a.empty() && !b.empty(), "empty sample set");
    std::vector<double> diffs(static_cast<std::size_t>(resamples));
    for (auto& d : diffs) d = resample_mean(b) - resample_mean(a);
    std::sort(diffs.begin(), diffs.end());
    out.push_back({x[i - 1], x[i], mean(b) - mean(a), percentile(diffs, 0.05), percentile(diffs, 0.95)});
  }
  return out;
}

bool non_increasing(const std::vector<TrendStep>& steps) {
  return std::all_of(steps.begin(), steps.end(), [](const TrendStep& s) { return s.diff_p05 <= 0; });
}

Json to_json(const RunReport& r, bool samples) {
  Json j{{"pipeline", to_string(r.pipeline)},
         {"clients", r.clients},
         {"sensors", r.sensors},
         {"sent", r.counts.sent},
         {"stored", r.counts.stored},
         {"lost", r.counts.lost},
         {"duplicates", r.counts.duplicates},
         {"latency_ms",
          {{"mean", r.latency.mean_ms},
           {"p50", r.latency.p50_ms},
           {"p95", r.latency.p95_ms},
           {"samples", r.latency.samples}}},
         {"throughput_msg_s", r.throughput_msg_s},
         {"client_throughput_msg_s", r.client_throughput_msg_s},
         {"elapsed_s", r.elapsed_s},
         {"retries", r.retries},
         {"originators", r.originators}};
  if (r.service) j["service"] = platform::to_string(*r.service);
  if (r.recovery_time_s) j["recovery_time_s"] = *r.recovery_time_s;
  if (r.lost_predicted) j["lost_predicted"] = *r.lost_predicted;
  if (samples) j["latency_samples_ms"] = r.latency_samples_ms;
  return j;
}

// ---------------------------------------------------------------------------
// Harness

namespace {

constexpr const char* kTenant = "bench";
constexpr const char* kPassword = "bench";
constexpr const char* kModel = "double";
constexpr const char* kRoute = "double";
const ThingId kAnalyser{"bench", "analyser"};

std::string sensor_name(int i) { return "sensor" + std::to_string(i); }
ThingId sensor_id(int i) { return {"bench", sensor_name(i)}; }

// Values are k * 0.01 for a global counter k; the model doubles them.
std::int64_t key_of(double value, double scale) { return std::llround(value * 100.0 / scale); }

Json seed_for(int sensors, bool ml) {
  Json seed;
  seed["policies"] = Json::array({{{"policyId", "bench:policy"},
                                   {"entries",
                                    {{"gateway", {{"read", true}, {"write", true}}},
                                     {"ml-bridge:*", {{"read", true}, {"write", true}}},
                                     {"api", {{"read", true}, {"write", true}}}}}}});
  Json twins = Json::array();
  twins.push_back({{"thingId", kAnalyser.str()},
                   {"policyId", "bench:policy"},
                   {"features", {{"prediction", {{"properties", Json::object()}}}}}});
  Json devices = Json::array();
  Json fwd_devices = Json::array();
  for (int i = 0; i < sensors; ++i) {
    twins.push_back({{"thingId", sensor_id(i).str()},
                     {"policyId", "bench:policy"},
                     {"parent", kAnalyser.str()},
                     {"features", {{"last_measured", {{"properties", Json::object()}}}}}});
    devices.push_back({{"deviceId", sensor_id(i).str()}, {"username", sensor_name(i)}, {"password", kPassword}});
    fwd_devices.push_back({{"deviceId", sensor_id(i).str()},
                           {"mlInputTopic", "ml/double/in"},
                           {"required_values", Json::array({{{"format", "float64"}, {"name", "last_measured.value"}}})},
                           {"active", true}});
  }
  seed["twins"] = twins;
  seed["tenants"] = Json::array(
      {{{"tenantId", kTenant},
        {"mapper", {{"rules", Json::array({{{"source", "/v"}, {"target", "/features/last_measured/properties/value"}}})}}},
        {"devices", devices}}});
  if (ml) {
    seed["models"] = Json::array({{{"modelId", kModel},
                                   {"inputTopic", "ml/double/in"},
                                   {"outputTopic", "ml/double/out"},
                                   {"inputSchema", Json::array({"float64"})},
                                   {"function", {{"id", "linear"}, {"params", {{"weights", {2.0}}, {"bias", 0.0}}}}}}});
    seed["forwarders"] = Json::array({{{"tenantId", kTenant}, {"active", true}, {"devices", fwd_devices}}});
    seed["routes"] = Json::array({{{"routeId", kRoute},
                                   {"sourceTopic", "ml/double/out"},
                                   {"targetQueue", "ditto"},
                                   {"active", true},
                                   {"mode", "update"},
                                   {"horizon_s", 0},
                                   {"ditto_message",
                                    {{"topic", "bench/analyser/things/twin/commands/modify"},
                                     {"path", "/features/prediction/properties/value"},
                                     {"value", "{0}"}}}}});
  }
  return seed;
}

// Hands out (key, timestamp) pairs, both strictly increasing.
class Issuer {
 public:
  explicit Issuer(const Clock& clock) : clock_(clock) {}

  std::pair<std::int64_t, TimestampNs> next() {
    std::lock_guard lock(mu_);
    last_ts_ = std::max(clock_.now(), last_ts_ + 1);
    return {next_key_++, last_ts_};
  }

 private:
  const Clock& clock_;
  std::mutex mu_;
  std::int64_t next_key_ = 0;
  TimestampNs last_ts_ = 0;
};

struct Sent {
  std::int64_t key;
  TimestampNs ts;
  int client;
};

Json frame(int sensor, std::int64_t key, TimestampNs ts) {
  return {{"tenant", kTenant},
          {"device", sensor_id(sensor).str()},
          {"username", sensor_name(sensor)},
          {"password", kPassword},
          {"payload", {{"v", static_cast<double>(key) * 0.01}}},
          {"headers", {{header::kTimestamp, std::to_string(ts)}}}};
}

// One platform plus its device intake in a scratch directory.
struct Rig {
  fs::path dir;
  std::unique_ptr<platform::Platform> platform;
  std::unique_ptr<gateway::FrameServer> frames;

  Rig(const fs::path& work_dir, const Scenario& s, int sensors, bool ml) {
    static std::atomic<int> counter{0};
    dir = work_dir / ("run-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(dir);
    platform::Platform::Options o;
    o.data_dir = dir;
    o.durability = s.durability;
    o.retry_interval = std::chrono::milliseconds(std::max<long>(1, std::lround(s.retry_s * 1000)));
    platform = std::make_unique<platform::Platform>(o);
    platform->seed(seed_for(sensors, ml));
    platform->start();
    frames = std::make_unique<gateway::FrameServer>(platform->gateway());
    frames->start();
  }

  ~Rig() {
    frames->stop();
    platform->stop();
    frames.reset();
    platform.reset();
    std::error_code ec;
    fs::remove_all(dir, ec);
  }

  // Points of one series; empty while the time series service is down.
  std::vector<timeseries::Point> points(const ThingId& id, const std::string& feature) {
    try {
      timeseries::Query q;
      q.thing_id = id;
      q.feature = feature;
      q.property = "value";
      return platform->timeseries()->query(q);
    } catch (const Error& e) {
      if (e.code() == Errc::Unavailable) return {};
      throw;
    }
  }
};

struct Collected {
  std::vector<timeseries::Point> points;  // with the expected originator
  std::vector<std::int64_t> keys;         // parallel to points
  std::map<std::string, std::size_t> originators;
};

// Every point of the series counts towards `originators`; only points from
// `originator` are matched against sent messages.
Collected collect(Rig& rig, const std::vector<ThingId>& ids, const std::string& feature, const std::string& originator,
                  double scale) {
  Collected c;
  for (const auto& id : ids)
    for (auto& p : rig.points(id, feature)) {
      ++c.originators[p.originator];
      if (p.originator != originator || !p.value.is_number()) continue;
      c.keys.push_back(key_of(p.value.get<double>(), scale));
      c.points.push_back(std::move(p));
    }
  return c;
}

// Waits until every sent key shows up or nothing arrives for too long.
Collected drain(Rig& rig, const std::vector<ThingId>& ids, const std::string& feature, const std::string& originator,
                double scale, std::size_t expected, double timeout_s) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
  for (;;) {
    auto c = collect(rig, ids, feature, originator, scale);
    if (std::set<std::int64_t>(c.keys.begin(), c.keys.end()).size() >= expected ||
        std::chrono::steady_clock::now() >= deadline)
      return c;
    std::this_thread::sleep_for(20ms);
  }
}

void fill_latency(RunReport& r, const std::vector<Sent>& sent, const Collected& c, int clients) {
  std::map<std::int64_t, const Sent*> by_key;
  for (const auto& s : sent) by_key[s.key] = &s;
  std::map<std::int64_t, TimestampNs> first_stored;
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    if (!by_key.count(c.keys[i])) continue;
    auto [it, fresh] = first_stored.emplace(c.keys[i], c.points[i].ingested_at);
    if (!fresh) it->second = std::min(it->second, c.points[i].ingested_at);
  }
  std::vector<TimestampNs> first_sent(static_cast<std::size_t>(clients), std::numeric_limits<TimestampNs>::max());
  std::vector<TimestampNs> last_stored(static_cast<std::size_t>(clients), 0);
  std::vector<std::size_t> delivered(static_cast<std::size_t>(clients), 0);
  TimestampNs t0 = std::numeric_limits<TimestampNs>::max(), t1 = 0;
  for (const auto& s : sent) {
    auto& fs0 = first_sent[static_cast<std::size_t>(s.client)];
    fs0 = std::min(fs0, s.ts);
    t0 = std::min(t0, s.ts);
  }
  for (const auto& [key, at] : first_stored) {
    const Sent& s = *by_key[key];
    r.latency_samples_ms.push_back(static_cast<double>(at - s.ts) / 1e6);
    auto& ls = last_stored[static_cast<std::size_t>(s.client)];
    ls = std::max(ls, at);
    ++delivered[static_cast<std::size_t>(s.client)];
    t1 = std::max(t1, at);
  }
  r.latency = latency_stats(r.latency_samples_ms);
  if (!first_stored.empty() && t1 > t0)
    r.throughput_msg_s = static_cast<double>(first_stored.size()) / (static_cast<double>(t1 - t0) / 1e9);
  double sum = 0;
  for (std::size_t i = 0; i < delivered.size(); ++i)
    if (delivered[i] > 0 && last_stored[i] > first_sent[i])
      sum += static_cast<double>(delivered[i]) / (static_cast<double>(last_stored[i] - first_sent[i]) / 1e9);
  r.client_throughput_msg_s = sum / static_cast<double>(clients);
}

// Sends until accepted, keeping key and timestamp. Returns retries used.
std::size_t send_until_ok(std::unique_ptr<gateway::FrameClient>& client, std::uint16_t port, const Json& request,
                          double retry_s, const std::atomic<bool>* give_up = nullptr) {
  std::size_t retries = 0;
  for (;;) {
    try {
      if (!client) client = std::make_unique<gateway::FrameClient>("127.0.0.1", port);
      const auto reply = client->call(request);
      if (reply.value("ok", false)) return retries;
      const auto code = reply.value("error", std::string());
      if (code != to_string(Errc::Unavailable))
        throw Error(Errc::InvalidArgument, "rejected: " + reply.dump());
    } catch (const Error& e) {
      if (e.code() != Errc::IoError) throw;
      client.reset();
    }
    if (give_up && give_up->load()) throw Error(Errc::Unavailable, "sender gave up");
    ++retries;
    std::this_thread::sleep_for(std::chrono::duration<double>(retry_s));
  }
}

RunReport run_flow(const Scenario& s, int clients, const fs::path& work_dir, bool ml) {
  const int sensors = s.shared_sensor ? 1 : clients;
  Rig rig(work_dir, s, sensors, ml);
  Issuer issuer(rig.platform->clock());
  const auto port = rig.frames->port();

  std::mutex mu;
  std::vector<Sent> sent;
  std::atomic<std::size_t> retries{0};
  const auto started = std::chrono::steady_clock::now();
  std::vector<std::future<void>> drivers;
  for (int c = 0; c < clients; ++c) {
    drivers.push_back(std::async(std::launch::async, [&, c] {
      std::unique_ptr<gateway::FrameClient> client;
      const int sensor = s.shared_sensor ? 0 : c;
      std::vector<Sent> mine;
      for (int m = 0; m < s.messages; ++m) {
        if (m > 0 && s.period_s > 0) std::this_thread::sleep_for(std::chrono::duration<double>(s.period_s));
        const auto [key, ts] = issuer.next();
        retries += send_until_ok(client, port, frame(sensor, key, ts), s.retry_s);
        mine.push_back({key, ts, c});
      }
      std::lock_guard lock(mu);
      sent.insert(sent.end(), mine.begin(), mine.end());
    }));
  }
  for (auto& d : drivers) d.get();

  std::vector<ThingId> ids;
  for (int i = 0; i < sensors; ++i) ids.push_back(sensor_id(i));
  const auto collected =
      ml ? drain(rig, {kAnalyser}, "prediction", bridges::route_originator(kRoute), 2.0, sent.size(),
                 s.drain_timeout_s)
         : drain(rig, ids, "last_measured", "gateway", 1.0, sent.size(), s.drain_timeout_s);

  RunReport r;
  r.pipeline = ml ? Pipeline::Ml : Pipeline::Core;
  r.clients = clients;
  r.sensors = sensors;
  r.retries = retries;
  std::vector<std::int64_t> keys;
  for (const auto& x : sent) keys.push_back(x.key);
  r.counts = reconcile(keys, collected.keys);
  r.originators = collected.originators;
  fill_latency(r, sent, collected, clients);
  r.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return r;
}

RunReport run_fault(const Scenario& s, const std::optional<FaultStep>& fault, const fs::path& work_dir) {
  Rig rig(work_dir, s, 1, true);
  Issuer issuer(rig.platform->clock());
  const auto port = rig.frames->port();

  std::atomic<bool> stop_faults{false};
  std::thread injector;
  const auto started = std::chrono::steady_clock::now();
  if (fault) {
    injector = std::thread([&] {
      auto sleep_until = [&](double t) {
        const auto at = started + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                      std::chrono::duration<double>(t));
        while (!stop_faults && std::chrono::steady_clock::now() < at) std::this_thread::sleep_for(5ms);
      };
      sleep_until(fault->at_s);
      rig.platform->kill(fault->service);
      sleep_until(fault->at_s + fault->down_s);
      rig.platform->restart(fault->service);
    });
  }

  std::vector<Sent> sent;
  std::size_t retries = 0;
  std::unique_ptr<gateway::FrameClient> client;
  try {
    for (int m = 0;; ++m) {
      const double t = m * s.fault_period_s;
      if (t >= s.duration_s) break;
      std::this_thread::sleep_until(started + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                  std::chrono::duration<double>(t)));
      const auto [key, ts] = issuer.next();
      retries += send_until_ok(client, port, frame(0, key, ts), s.retry_s);
      sent.push_back({key, ts, 0});
    }
  } catch (...) {
    stop_faults = true;
    if (injector.joinable()) injector.join();
    throw;
  }
  if (injector.joinable()) injector.join();

  const bool route = fault && fault->service == platform::Service::RouteConsumer;
  const auto measured =
      drain(rig, {sensor_id(0)}, "last_measured", "gateway", 1.0, sent.size(), s.drain_timeout_s);
  const auto predicted = drain(rig, {kAnalyser}, "prediction", bridges::route_originator(kRoute), 2.0, sent.size(),
                               s.drain_timeout_s);
  const auto& tracked = route ? predicted : measured;

  std::vector<std::int64_t> keys;
  for (const auto& x : sent) keys.push_back(x.key);
  RunReport r;
  r.pipeline = Pipeline::Ml;
  r.clients = 1;
  r.sensors = 1;
  r.retries = retries;
  r.counts = reconcile(keys, tracked.keys);
  r.originators = tracked.originators;
  r.lost_predicted = reconcile(keys, predicted.keys).lost;
  fill_latency(r, sent, tracked, 1);
  std::vector<double> stored_at;
  for (const auto& p : tracked.points) stored_at.push_back(static_cast<double>(p.ingested_at) / 1e9);
  r.recovery_time_s = max_gap(stored_at);
  if (fault) r.service = fault->service;
  r.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return r;
}

Json summarize(const std::vector<RunReport>& runs) {
  std::vector<double> lat, p50, p95, thr, cthr;
  std::size_t sent = 0, stored = 0, lost = 0, dup = 0;
  for (const auto& r : runs) {
    lat.push_back(r.latency.mean_ms);
    p50.push_back(r.latency.p50_ms);
    p95.push_back(r.latency.p95_ms);
    thr.push_back(r.throughput_msg_s);
    cthr.push_back(r.client_throughput_msg_s);
    sent += r.counts.sent;
    stored += r.counts.stored;
    lost += r.counts.lost;
    dup += r.counts.duplicates;
  }
  return {{"latency_ms", {{"mean", mean(lat)}, {"p50", mean(p50)}, {"p95", mean(p95)}}},
          {"throughput_msg_s", mean(thr)},
          {"client_throughput_msg_s", mean(cthr)},
          {"sent", sent},
          {"stored", stored},
          {"lost", lost},
          {"duplicates", dup}};
}

}  // namespace

RunReport run_core_flow(const Scenario& s, int clients, const fs::path& work_dir) {
  return run_flow(s, clients, work_dir, false);
}

RunReport run_ml_flow(const Scenario& s, int clients, const fs::path& work_dir) {
  return run_flow(s, clients, work_dir, true);
}

RunReport run_fault_injection(const Scenario& s, const FaultStep& fault, const fs::path& work_dir) {
  require(fault.at_s + fault.down_s <= s.duration_s, "fault must end within duration_s");
  return run_fault(s, fault, work_dir);
}

RunReport run_fault_baseline(const Scenario& s, const fs::path& work_dir) {
  return run_fault(s, std::nullopt, work_dir);
}

Json run_flow_report(const Scenario& s, const fs::path& work_dir) {
  Json points = Json::array();
  std::vector<double> xs, mean_latency;
  std::vector<std::vector<double>> client_thr, total_thr;
  for (int c : s.clients) {
    std::vector<RunReport> reps;
    for (int i = 0; i < s.repetitions; ++i)
      reps.push_back(s.pipeline == Pipeline::Core ? run_core_flow(s, c, work_dir) : run_ml_flow(s, c, work_dir));
    Json p = summarize(reps);
    p["clients"] = c;
    p["sensors"] = reps.front().sensors;
    p["runs"] = Json::array();
    std::vector<double> ct, tt;
    for (const auto& r : reps) {
      p["runs"].push_back(to_json(r));
      ct.push_back(r.client_throughput_msg_s);
      tt.push_back(r.throughput_msg_s);
    }
    xs.push_back(c);
    mean_latency.push_back(p["latency_ms"]["mean"].get<double>());
    client_thr.push_back(ct);
    total_thr.push_back(tt);
    points.push_back(std::move(p));
  }
  Json report{{"kind", to_string(s.pipeline)}, {"scenario", to_json(s)}, {"points", points}};
  if (s.clients.size() >= 2) {
    std::mt19937_64 rng(s.seed);
    auto steps_json = [](const std::vector<TrendStep>& steps) {
      Json out = Json::array();
      for (const auto& t : steps)
        out.push_back({{"from", t.from}, {"to", t.to}, {"diff_mean", t.diff_mean}, {"diff_p05", t.diff_p05},
                       {"diff_p95", t.diff_p95}});
      return out;
    };
    const auto client_steps = bootstrap_steps(s.clients, client_thr, rng);
    const auto total_steps = bootstrap_steps(s.clients, total_thr, rng);
    report["trend"] = {{"spearman_latency", spearman(xs, mean_latency)},
                       {"client_throughput_non_increasing", non_increasing(client_steps)},
                       {"client_throughput_steps", steps_json(client_steps)},
                       {"throughput_non_increasing", non_increasing(total_steps)},
                       {"throughput_steps", steps_json(total_steps)}};
  }
  return report;
}

Json run_fault_report(const Scenario& s, const fs::path& work_dir) {
  std::vector<std::future<std::vector<RunReport>>> jobs;
  for (const auto& f : s.faults) {
    jobs.push_back(std::async(std::launch::async, [&s, f, &work_dir] {
      std::vector<RunReport> runs;
      for (int i = 0; i < s.runs; ++i) runs.push_back(run_fault_injection(s, f, work_dir));
      return runs;
    }));
  }
  std::vector<RunReport> baseline;
  for (int i = 0; i < s.runs; ++i) baseline.push_back(run_fault_baseline(s, work_dir));

  auto section = [](const std::vector<RunReport>& runs) {
    Json j = summarize(runs);
    std::vector<double> rec;
    std::size_t lost_predicted = 0, retries = 0;
    j["runs"] = Json::array();
    for (const auto& r : runs) {
      rec.push_back(r.recovery_time_s.value_or(0));
      lost_predicted += r.lost_predicted.value_or(0);
      retries += r.retries;
      j["runs"].push_back(to_json(r));
    }
    j["recovery_time_s"] = {{"mean", mean(rec)},
                            {"max", rec.empty() ? 0 : *std::max_element(rec.begin(), rec.end())}};
    j["lost_predicted"] = lost_predicted;
    j["retries"] = retries;
    return j;
  };
  Json services = Json::array();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    Json j = section(jobs[i].get());
    j["service"] = platform::to_string(s.faults[i].service);
    j["at_s"] = s.faults[i].at_s;
    j["down_s"] = s.faults[i].down_s;
    services.push_back(std::move(j));
  }
  return {{"kind", "faults"}, {"scenario", to_json(s)}, {"baseline", section(baseline)}, {"services", services}};
}

}  // namespace twinforge::bench
