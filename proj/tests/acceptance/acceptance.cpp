// Runs the acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "registry_fuzz.hpp"
#include "template_gen.hpp"
#include "twinforge/bench/bench.hpp"
#include "twinforge/bridges/bridges.hpp"
#include "twinforge/core/error.hpp"
#include "twinforge/platform/platform.hpp"
#include "twinforge/watchdog/watchdog.hpp"
#include "watchdog_oracle.hpp"

namespace fs = std::filesystem;
using namespace twinforge;
using namespace std::chrono_literals;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  Json data = Json::object();
};

class Scratch {
 public:
  Scratch() {
    path_ = fs::temp_directory_path() / ("twinforge-acceptance-" + std::to_string(std::random_device{}()));
    fs::create_directories(path_);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(digits);
  o << v;
  return o.str();
}

// ---------------------------------------------------------------------------
// 1. Hierarchy property suite

Outcome hierarchy_suite() {
  constexpr int kSequences = 10'000;
  const auto t0 = std::chrono::steady_clock::now();
  Scratch dir;
  bus::Bus bus{bus::Bus::Options{dir.path() / "bus"}};
  std::mt19937_64 rng(20240101);
  std::size_t ops = 0, violations = 0, managed_attempts = 0, managed_rejections = 0;
  std::map<std::string, std::size_t> kinds;
  std::vector<std::string> first;
  for (int seq = 0; seq < kSequences; ++seq) {
    const auto reg_dir = dir.path() / ("reg" + std::to_string(seq));
    {
      registry::Registry reg{bus, registry::Registry::Options{reg_dir}};
      const std::size_t len = 4 + rng() % 37;
      const auto rep = oracle::fuzz_registry(reg, bus, rng(), len);
      ops += rep.ops;
      violations += rep.violations.size();
      managed_attempts += rep.managed_attempts;
      managed_rejections += rep.managed_rejections;
      for (const auto& [k, n] : rep.by_kind) kinds[k] += n;
      for (const auto& v : rep.violations)
        if (first.size() < 5) first.push_back("seq " + std::to_string(seq) + " " + v);
    }
    fs::remove_all(reg_dir);
  }

  // Each managed attribute, on a twin and on a type, by path and by merge.
  std::size_t direct_rejected = 0, direct_total = 0;
  {
    registry::Registry reg{bus, registry::Registry::Options{dir.path() / "managed"}};
    reg.put_policy(Policy{"m:p", {{"w", {true, true}}}});
    const ThingId twin{"m", "twin"}, type{"m", "Type"};
    reg.create_twin(TwinRecord{twin, "m:p", Json::object(), {}});
    reg.create_type(TwinRecord{type, "m:p", Json::object(), {}});
    for (const auto& id : {twin, type})
      for (const char* key : {"isType", "type", "parent", "children"})
        for (bool merge : {false, true}) {
          Envelope e{make_topic(id, Channel::Commands, Action::Modify), std::string("/attributes/") + key,
                     Json("x"), {}};
          if (merge) {
            e.path = "/attributes";
            e.value = Json{{key, "x"}};
          }
          ++direct_total;
          try {
            reg.update(id, e, "w");
          } catch (const Error& err) {
            if (err.code() == Errc::ManagedAttributeViolation) ++direct_rejected;
          }
        }
  }

  const double elapsed = seconds_since(t0);
  Outcome o;
  o.pass = violations == 0 && managed_attempts == managed_rejections && direct_rejected == direct_total &&
           elapsed < 60.0;
  o.detail = std::to_string(kSequences) + " sequences, " + std::to_string(ops) + " ops, " +
             std::to_string(violations) + " violations, managed writes rejected " +
             std::to_string(managed_rejections + direct_rejected) + "/" +
             std::to_string(managed_attempts + direct_total) + ", " + fmt(elapsed, 1) + " s (limit 60 s)";
  for (const auto& v : first) o.detail += "\n    " + v;
  o.data = {{"sequences", kSequences}, {"ops", ops},           {"violations", violations},
            {"by_kind", kinds},        {"elapsed_s", elapsed}, {"managed_direct", {direct_rejected, direct_total}}};
  return o;
}

// ---------------------------------------------------------------------------
// 2. End-to-end core flow

Outcome core_flow() {
  Scratch dir;
  bench::Scenario s;
  s.messages = 100;
  s.shared_sensor = false;
  const auto r = bench::run_core_flow(s, 27, dir.path());
  const bool tags = r.originators == std::map<std::string, std::size_t>{{"gateway", 2700}};
  Outcome o;
  o.pass = r.sensors == 27 && r.counts.sent == 2700 && r.counts.stored == 2700 && r.counts.lost == 0 &&
           r.counts.duplicates == 0 && tags && r.elapsed_s < 120.0;
  o.detail = "27 sensors x 100: stored " + std::to_string(r.counts.stored) + "/" + std::to_string(r.counts.sent) +
             ", lost " + std::to_string(r.counts.lost) + ", duplicates " + std::to_string(r.counts.duplicates) +
             ", originators " + Json(r.originators).dump() + ", mean latency " + fmt(r.latency.mean_ms, 2) +
             " ms, " + fmt(r.elapsed_s, 1) + " s (limit 120 s)";
  o.data = bench::to_json(r, false);
  return o;
}

// ---------------------------------------------------------------------------
// 3. Watchdog oracle equivalence

Outcome watchdog_oracle() {
  constexpr TimestampNs kMs = 1'000'000;
  std::mt19937_64 rng(4242);
  std::size_t mismatched_traces = 0, interval_checks = 0, interval_errors = 0, retained = 0, retained_errors = 0;
  std::size_t dispatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::int64_t horizon = 0;
    const auto trace = testing::random_trace(rng, 1 + static_cast<int>(rng() % 4), &horizon);
    const auto expected = testing::reference_watchdog(trace, horizon);

    std::vector<testing::OracleDispatch> actual;
    std::map<std::string, std::size_t> fires;  // per device since its last message
    watchdog::Engine engine([&](const watchdog::Dispatch& d) {
      actual.push_back({d.at / kMs, d.device_id});
      ++fires[d.device_id];
    });
    std::map<std::string, std::int64_t> prev;
    bool same = true;
    std::map<std::string, std::size_t> seen;
    for (const auto& m : trace) {
      if (!engine.has_device(m.device)) {
        watchdog::DeviceConfig d{m.device, true, "ml-in",
                                 {ValueSpec{Format::Float64, "$second"}}, {}};
        engine.put_device(d);
      }
      const auto before = engine.device(m.device).learned_interval;
      engine.on_message(m.device, m.t_ms * kMs, {});
      const auto after = engine.device(m.device).learned_interval;
      const bool fired = fires[m.device] > 0;
      fires[m.device] = 0;
      // Learning, computed from the trace itself: a quiet gap sets the
      // interval, a gap with fires keeps it.
      if (prev.count(m.device)) {
        const std::int64_t gap = m.t_ms - prev[m.device];
        if (!fired) {
          ++interval_checks;
          const std::int64_t whole = std::max<std::int64_t>((gap + 999) / 1000, 1);
          if (!after || *after != (whole * 1000 + 200) * kMs) ++interval_errors;
        } else {
          ++retained;
          if (after != before) ++retained_errors;
        }
      }
      prev[m.device] = m.t_ms;
      const auto& want = expected.intervals_ms.at(m.device).at(seen[m.device]++);
      if (after.has_value() != want.has_value() || (after && *after != *want * kMs)) same = false;
    }
    engine.advance_to(horizon * kMs);
    std::sort(actual.begin(), actual.end());
    dispatches += actual.size();
    if (!same || actual != expected.dispatches) ++mismatched_traces;
  }
  Outcome o;
  o.pass = mismatched_traces == 0 && interval_errors == 0 && retained_errors == 0 && interval_checks > 0 &&
           retained > 0;
  o.detail = "100 traces, " + std::to_string(dispatches) + " dispatches, " + std::to_string(mismatched_traces) +
             " mismatched traces; interval = ceil(gap)+0.2 s in " +
             std::to_string(interval_checks - interval_errors) + "/" + std::to_string(interval_checks) +
             "; interval kept after outage in " + std::to_string(retained - retained_errors) + "/" +
             std::to_string(retained);
  o.data = {{"mismatched_traces", mismatched_traces}, {"interval_checks", interval_checks},
            {"interval_errors", interval_errors},     {"retained", retained},
            {"retained_errors", retained_errors},     {"dispatches", dispatches}};
  return o;
}

// ---------------------------------------------------------------------------
// 4. ML round trip

Json ml_seed(const std::string& mode) {
  return Json::parse(R"({
    "policies": [{"policyId": "acc:policy", "entries": {
      "gateway": {"read": true, "write": true}, "ml-bridge:*": {"read": true, "write": true}}}],
    "twins": [{"thingId": "acc:DHT22", "policyId": "acc:policy", "attributes": {"model": "DHT22"},
               "features": {"temperature": {"properties": {}}, "doubled": {"properties": {}}}}],
    "tenants": [{"tenantId": "acc", "mapper": {"rules": [
        {"source": "/t", "target": "/features/temperature/properties/value"}]},
      "devices": [{"deviceId": "acc:DHT22", "username": "dht", "password": "pw"}]}],
    "models": [{"modelId": "double", "inputTopic": "acc/in", "outputTopic": "acc/out",
                "inputSchema": ["float64"], "function": {"id": "linear", "params": {"weights": [2.0], "bias": 0.0}}}],
    "forwarders": [{"tenantId": "acc", "active": true, "devices": [{"deviceId": "acc:DHT22", "mlInputTopic": "acc/in",
      "required_values": [{"format": "float64", "name": "temperature"}], "active": true}]}],
    "routes": [{"routeId": "double", "sourceTopic": "acc/out", "targetQueue": "ditto", "active": true,
      "mode": ")" + mode + R"(", "horizon_s": 60, "ditto_message": {
        "topic": "acc/DHT22/things/twin/commands/modify",
        "path": "/features/doubled/properties/value", "value": "{0}"}}]
  })");
}

struct MlRun {
  std::map<TimestampNs, double> inputs;             // by x-ts
  std::map<TimestampNs, std::vector<Envelope>> route_events;  // by x-ts
  std::vector<timeseries::Point> predicted, measured;
  std::vector<ThingId> twins;
  TwinRecord source;
};

MlRun run_ml(const fs::path& dir, const std::string& mode, int n, std::uint64_t seed) {
  platform::Platform p({dir});
  p.seed(ml_seed(mode));
  auto events = p.bus().subscribe_latest(registry::kEventTopic);
  p.start();
  MlRun out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> value(-500.0, 500.0);
  const std::string originator = bridges::route_originator("double");
  for (int i = 0; i < n; ++i) {
    const TimestampNs ts = 1'700'000'000'000'000'000LL + i * 1'000'000LL;
    double x = value(rng);
    while (std::any_of(out.inputs.begin(), out.inputs.end(), [&](const auto& kv) { return kv.second == x; }))
      x = value(rng);
    out.inputs[ts] = x;
    p.gateway().ingest("acc", "acc:DHT22", {"dht", "pw"}, Json{{"t", x}}.dump(),
                       {{header::kTimestamp, std::to_string(ts)}});
  }
  const auto deadline = std::chrono::steady_clock::now() + 30s;
  std::size_t seen = 0;
  while (seen < static_cast<std::size_t>(n) && std::chrono::steady_clock::now() < deadline) {
    for (const auto& m : events.poll_batch(256, 50ms)) {
      const auto e = envelope_from_json(Json::parse(m.payload));
      auto it = e.headers.find(header::kOriginator);
      if (it == e.headers.end() || it->second != originator) continue;
      const auto ts = std::stoll(e.headers.at(header::kTimestamp));
      if (out.route_events[ts].empty()) ++seen;
      out.route_events[ts].push_back(e);
    }
  }
  // Let the sink catch up with the same events.
  auto store = p.timeseries();
  const auto sink_deadline = std::chrono::steady_clock::now() + 30s;
  for (;;) {
    out.predicted.clear();
    out.measured.clear();
    for (const auto& id : p.registry().list_twins()) {
      for (auto& pt : store->query({id, "doubled", "value"})) out.predicted.push_back(pt);
      for (auto& pt : store->query({id, "temperature", "value"})) out.measured.push_back(pt);
    }
    if ((out.predicted.size() >= seen && out.measured.size() >= static_cast<std::size_t>(n)) ||
        std::chrono::steady_clock::now() > sink_deadline)
      break;
    std::this_thread::sleep_for(20ms);
  }
  out.twins = p.registry().list_twins();
  out.source = p.registry().get(ThingId{"acc", "DHT22"});
  p.stop();
  return out;
}

Outcome ml_round_trip() {
  Scratch dir;
  const std::string originator = bridges::route_originator("double");
  const auto up = run_ml(dir.path() / "update", "update", 50, 7);
  std::size_t correct = 0;
  double worst = 0;
  for (const auto& [ts, x] : up.inputs) {
    auto it = up.route_events.find(ts);
    if (it == up.route_events.end() || it->second.size() != 1) continue;
    const auto& e = it->second.front();
    if (e.path != "/features/doubled/properties/value" || !e.value.is_number()) continue;
    const double err = std::abs(e.value.get<double>() - 2 * x);
    worst = std::max(worst, err);
    if (err <= 1e-12) ++correct;
  }
  std::set<std::string> predicted_tags, measured_tags;
  for (const auto& pt : up.predicted) predicted_tags.insert(pt.originator);
  for (const auto& pt : up.measured) measured_tags.insert(pt.originator);
  const bool tags_ok = up.predicted.size() == 50 && predicted_tags == std::set<std::string>{originator} &&
                       measured_tags == std::set<std::string>{"gateway"} && originator != "gateway";

  const auto fc = run_ml(dir.path() / "future", "future_copy", 10, 8);
  std::vector<std::string> copies;
  for (const auto& id : fc.twins)
    if (id.name.size() > 10 && id.name.ends_with(bridges::kPredictedSuffix)) copies.push_back(id.str());
  const auto& doubled = fc.source.features.at("doubled").properties;
  const bool source_untouched = !doubled.contains("value");
  bool copy_events_only = true;
  for (const auto& [ts, evs] : fc.route_events)
    for (const auto& e : evs)
      if (parse_topic(e.topic).thing_id != ThingId{"acc", "DHT22_predicted"}) copy_events_only = false;
  const bool future_ok = copies == std::vector<std::string>{"acc:DHT22_predicted"} && source_untouched &&
                         copy_events_only && fc.route_events.size() == 10;

  Outcome o;
  o.pass = correct == 50 && tags_ok && future_ok;
  o.detail = "y=2x updates correct " + std::to_string(correct) + "/50 (max error " + fmt(worst, 15) +
             "); predicted tags " + Json(predicted_tags).dump() + " vs measured " + Json(measured_tags).dump() +
             "; future_copy: source " + (source_untouched ? "unchanged" : "CHANGED") + ", predicted twins " +
             Json(copies).dump();
  o.data = {{"correct", correct}, {"max_error", worst}, {"predicted_points", up.predicted.size()},
            {"future_copy_twins", copies}, {"source_unchanged", source_untouched}};
  return o;
}

// ---------------------------------------------------------------------------
// 5. Template substitution

Outcome template_substitution() {
  const Json fig = Json::parse(R"({
    "topic": "test/DHT22/things/twin/commands/modify",
    "path": "/features",
    "value": {
      "temperature": {"properties": {"value": "{0}"}},
      "humidity": {"properties": {"value": "{1}"}}
    }})");
  std::mt19937_64 rng(1313);
  std::uniform_real_distribution<double> dist(-1e6, 1e6);
  std::size_t fig_ok = 0;
  for (int i = 0; i < 100; ++i) {
    const double a = dist(rng), b = dist(rng);
    try {
      const auto e = bridges::substitute(fig, {a, b});
      const auto& t = e.value["temperature"]["properties"]["value"];
      const auto& h = e.value["humidity"]["properties"]["value"];
      if (is_valid_envelope(e) && t.is_number() && h.is_number() && t.get<double>() == a && h.get<double>() == b &&
          e.topic == fig["topic"] && e.path == "/features")
        ++fig_ok;
    } catch (const Error&) {
    }
  }
  std::size_t keys_ok = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int arity = 1 + static_cast<int>(rng() % 4);
    Json value = Json::object();
    for (int i = 0; i < 3; ++i) value["f" + std::to_string(i)] = testing::random_value(rng, 0, arity);
    Json tmpl{{"topic", "a/b/things/twin/commands/modify"}, {"path", "/attributes"}, {"value", value}};
    std::vector<double> outputs;
    for (int i = 0; i < arity; ++i) outputs.push_back(static_cast<double>(rng() % 1000) / 8.0);
    try {
      const auto e = bridges::substitute(tmpl, outputs);
      std::set<std::string> before, after;
      testing::key_paths(tmpl["value"], "", before);
      testing::key_paths(e.value, "", after);
      if (before == after) ++keys_ok;
    } catch (const Error&) {
    }
  }
  Outcome o;
  o.pass = fig_ok == 100 && keys_ok == 1000;
  o.detail = "temperature/humidity template " + std::to_string(fig_ok) + "/100 valid with numeric values; key sets "
             "preserved " + std::to_string(keys_ok) + "/1000";
  o.data = {{"template_ok", fig_ok}, {"key_sets_ok", keys_ok}};
  return o;
}

// ---------------------------------------------------------------------------
// 6. Fault tolerance

Outcome fault_tolerance() {
  Scratch dir;
  bench::Scenario s;
  s.runs = 5;
  s.duration_s = 3.0;
  s.fault_period_s = 0.5;
  for (auto svc : platform::kServices) s.faults.push_back({svc, 1.0, 1.0});
  const auto report = bench::run_fault_report(s, dir.path());
  bool ok = true;
  std::string detail = "5 runs each, 1 s down, baseline gap " +
                       fmt(report["baseline"]["recovery_time_s"]["mean"].get<double>()) + " s;";
  for (const auto& svc : report["services"]) {
    const auto name = svc["service"].get<std::string>();
    const bool durable = name == "bus" || name == "timeseries" || name == "route-consumer";
    const auto lost = svc["lost"].get<std::size_t>();
    if (svc["runs"].size() != 5) ok = false;
    if (durable && lost != 0) ok = false;
    detail += " " + name + " recovery " + fmt(svc["recovery_time_s"]["mean"].get<double>()) + " s lost " +
              std::to_string(lost) + (durable ? "" : " (not required)") + ";";
  }
  detail.pop_back();
  Outcome o;
  o.pass = ok;
  o.detail = detail;
  o.data = report;
  for (auto& svc : o.data["services"])
    for (auto& run : svc["runs"]) run.erase("latency_samples_ms");
  for (auto& run : o.data["baseline"]["runs"]) run.erase("latency_samples_ms");
  return o;
}

// ---------------------------------------------------------------------------
// 7. Latency trend

Outcome latency_trend() {
  Scratch dir;
  bench::Scenario s;
  s.shared_sensor = true;
  s.clients = {1, 5, 10, 17, 20, 27};
  s.repetitions = 10;
  s.seed = 7;
  bool ok = true;
  std::string detail;
  Json data = Json::object();
  for (auto pipeline : {bench::Pipeline::Core, bench::Pipeline::Ml}) {
    s.pipeline = pipeline;
    s.messages = pipeline == bench::Pipeline::Core ? 50 : 20;
    auto report = bench::run_flow_report(s, dir.path());
    const auto& t = report["trend"];
    const double rho = t["spearman_latency"].get<double>();
    const bool falling = t["client_throughput_non_increasing"].get<bool>();
    ok = ok && rho >= 0.8 && falling;
    std::string lat, thr;
    for (const auto& p : report["points"]) {
      lat += (lat.empty() ? "" : "/") + fmt(p["latency_ms"]["mean"].get<double>(), 1);
      thr += (thr.empty() ? "" : "/") + fmt(p["client_throughput_msg_s"].get<double>(), 0);
    }
    detail += std::string(detail.empty() ? "" : "; ") + std::string(bench::to_string(pipeline)) + ": spearman " +
              fmt(rho) + " (>= 0.8), latency ms " + lat + ", per-client msg/s " + thr + " non-increasing " +
              (falling ? "yes" : "no") + ", aggregate msg/s non-increasing " +
              (t["throughput_non_increasing"].get<bool>() ? "yes" : "no") + " (informational)";
    for (auto& p : report["points"])
      for (auto& run : p["runs"]) run.erase("latency_samples_ms");
    data[std::string(bench::to_string(pipeline))] = std::move(report);
  }
  Outcome o;
  o.pass = ok;
  o.detail = detail;
  o.data = std::move(data);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"twinforge acceptance criteria"};
  std::vector<int> only;
  std::string json_out;
  app.add_option("--only", only, "criteria to run (default all)")->check(CLI::Range(1, 7));
  app.add_option("--json", json_out, "write measurements to this file");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"hierarchy property suite", hierarchy_suite},
      {"end-to-end core flow", core_flow},
      {"watchdog oracle equivalence", watchdog_oracle},
      {"ML round trip", ml_round_trip},
      {"template substitution", template_substitution},
      {"fault tolerance", fault_tolerance},
      {"latency trend", latency_trend}};

  int failed = 0;
  Json all = Json::object();
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " " << criteria[i].first << ": " << o.detail
              << " [" << fmt(seconds_since(t0), 1) << " s]" << std::endl;
    all[std::to_string(n)] = {{"name", criteria[i].first}, {"pass", o.pass}, {"detail", o.detail}, {"data", o.data}};
  }
  if (!json_out.empty()) std::ofstream(json_out) << all.dump(2) << "\n";
  return failed;
}
