#include <bit>
#include <cstring>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "twinforge/core/error.hpp"
#include "twinforge/gateway/gateway.hpp"
#include "twinforge/watchdog/watchdog.hpp"
#include "watchdog_oracle.hpp"

using namespace twinforge;
using namespace twinforge::watchdog;
using namespace std::chrono_literals;
using twinforge::testing::TempDir;

namespace {

constexpr TimestampNs kMs = 1'000'000;
constexpr TimestampNs kSec = kNsPerSecond;

// 2024-01-02T00:00:00Z
constexpr TimestampNs kJan2 = 1704153600LL * kSec;

std::vector<ValueSpec> fig_specs() {
  return specs_from_json(Json::parse(R"([
    {"format":"float64","name":"$year"},
    {"format":"float64","name":"$month"},
    {"format":"float64","name":"$day"},
    {"format":"float64","name":"temperature","last_value":null},
    {"format":"float64","name":"humidity","last_value":null}])"));
}

DeviceConfig device(const std::string& id, double value = 1.0) {
  DeviceConfig d{id, true, "ml-in", {ValueSpec{Format::Float64, "$second"}, ValueSpec{Format::Float64, "v"}}, {}};
  d.required_values[1].last_value = value;
  return d;
}

struct Recorder {
  std::vector<Dispatch> out;
  Engine::DispatchFn fn() {
    return [this](const Dispatch& d) { out.push_back(d); };
  }
};

std::map<std::string, Json> fields(double v) { return {{"v", v}}; }

}  // namespace

TEST_CASE("interval learning rule") {
  CHECK(learn_interval(10'000 * kMs - 7'300 * kMs) == 3'200 * kMs);
  CHECK(learn_interval(1 * kSec) == 1'200 * kMs);
  CHECK(learn_interval(1 * kSec + 1) == 2'200 * kMs);
  CHECK(learn_interval(0) == 1'200 * kMs);

  Recorder rec;
  Engine e(rec.fn());
  e.put_device(device("d"));
  e.on_message("d", 7'300 * kMs, {});
  CHECK_FALSE(e.device("d").learned_interval);
  CHECK(e.timer("d").armed);
  CHECK_FALSE(e.timer("d").deadline);
  CHECK(e.on_message("d", 10'000 * kMs, {}));
  CHECK(*e.device("d").learned_interval == 3'200 * kMs);

  Engine p(rec.fn());
  p.put_device(device("d"));
  for (int t : {0, 1, 2}) p.on_message("d", t * kSec, {});
  CHECK(*p.device("d").learned_interval == 1'200 * kMs);
  // Silence until t=10 then a message: the interval stays.
  p.on_message("d", 10 * kSec, {});
  CHECK(*p.device("d").learned_interval == 1'200 * kMs);
  CHECK(*p.timer("d").deadline == 11'200 * kMs);
}

TEST_CASE("build_input") {
  auto specs = fig_specs();
  CHECK_THROWS_AS(build_input(specs, kJan2), Error);
  try {
    build_input(specs, kJan2);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MissingLastValue);
  }
  absorb_fields(specs, {{"temperature", 20.0}, {"humidity", 30.0}});
  const auto bytes = build_input(specs, kJan2 + 5 * 3600 * kSec);
  REQUIRE(bytes.size() == 40);
  const double expect[] = {2024, 1, 2, 20.0, 30.0};
  // Independent decode: the host is little-endian.
  static_assert(std::endian::native == std::endian::little);
  for (int i = 0; i < 5; ++i) {
    double v;
    std::memcpy(&v, bytes.data() + 8 * i, 8);
    CHECK(v == expect[i]);
  }
  CHECK(build_input({}, kJan2).empty());
  try {
    build_input({ValueSpec{Format::Float64, "$fortnight"}}, kJan2);
    FAIL("expected UnknownTimeField");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnknownTimeField);
  }
  const TimestampNs t = kJan2 + (13 * 3600 + 14 * 60 + 15) * kSec + 999 * kMs;
  CHECK(time_field("$hour", t) == 13);
  CHECK(time_field("$minute", t) == 14);
  CHECK(time_field("$second", t) == 15);
  CHECK(time_field("$year", 951782400LL * kSec) == 2000);  // 2000-02-29
  CHECK(time_field("$day", 951782400LL * kSec) == 29);

  CHECK_THROWS_AS(value_spec_from_json(Json::parse(R"({"format":"float16","name":"x"})")), Error);
  CHECK_THROWS_AS(value_spec_from_json(Json::parse(R"({"format":"int32","name":"$year","last_value":3})")), Error);
  CHECK(specs_from_json(specs_to_json(specs)) == specs);
}

TEST_CASE("codec round trip and length") {
  std::mt19937_64 rng(5);
  const Format formats[] = {Format::Float64, Format::Float32, Format::Int64, Format::Int32};
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Format> schema;
    std::vector<double> values;
    std::size_t size = 0;
    const int n = static_cast<int>(rng() % 8);
    for (int i = 0; i < n; ++i) {
      const auto f = formats[rng() % 4];
      schema.push_back(f);
      std::uniform_real_distribution<double> u(-1e6, 1e6);
      switch (f) {
        case Format::Float64: values.push_back(u(rng)); size += 8; break;
        case Format::Float32: values.push_back(static_cast<float>(u(rng))); size += 4; break;
        case Format::Int64: values.push_back(static_cast<double>(static_cast<std::int64_t>(rng() % (1ULL << 52)) - (1LL << 51))); size += 8; break;
        case Format::Int32: values.push_back(static_cast<std::int32_t>(rng())); size += 4; break;
      }
    }
    const auto bytes = encode_values(schema, values);
    CHECK(bytes.size() == size);
    CHECK(decode_values(schema, bytes) == values);
  }
  CHECK_THROWS_AS(decode_values({Format::Float64}, "1234"), Error);
  CHECK_THROWS_AS(encode_values({Format::Int32}, {1.5}), Error);
  CHECK_THROWS_AS(encode_values({Format::Int32}, {3e9}), Error);
  CHECK(decode_values({Format::Int32}, encode_values({Format::Int32}, {-2147483648.0}))[0] == -2147483648.0);
}

TEST_CASE("message fields") {
  auto e = envelope_from_json(Json::parse(R"({
    "topic":"t/d/things/twin/commands/modify","path":"/features",
    "value":{"temperature":{"properties":{"value":21.5,"unit":"C"}},
             "humidity":{"properties":{"value":40}}}})"));
  auto f = message_fields(e);
  CHECK(f.at("temperature") == 21.5);
  CHECK(f.at("humidity.value") == 40);
  CHECK(f.at("unit") == "C");
  CHECK(f.count("value") == 0);  // ambiguous across features

  auto leaf = envelope_from_json(Json::parse(
      R"({"topic":"t/d/things/twin/commands/modify","path":"/features/temperature/properties/value","value":3})"));
  CHECK(message_fields(leaf).at("temperature") == 3);
}

TEST_CASE("dispatch during silence") {
  Recorder rec;
  auto metrics = std::make_shared<Metrics>();
  Engine e(rec.fn(), metrics);
  e.put_device(device("d", 7.0));
  e.on_message("d", 0, fields(5.0));
  e.on_message("d", 1 * kSec, fields(6.0));  // interval 1.2 s
  e.advance_to(1 * kSec + 3 * 1'200 * kMs + 100 * kMs);
  REQUIRE(rec.out.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(rec.out[i].at == 1 * kSec + (i + 1) * 1'200 * kMs);
    CHECK(decode_values({Format::Float64, Format::Float64}, rec.out[i].bytes)[1] == 6.0);
    CHECK(rec.out[i].topic == "ml-in");
  }
  CHECK(metrics->value(metric::kDispatched) == 3);

  // Resumes: no dispatch while messages keep arriving in time.
  for (int i = 0; i < 10; ++i) e.on_message("d", 5 * kSec + i * kSec, fields(i));
  CHECK(rec.out.size() == 3);

  // Missing value: no dispatch, warning counted, timer still running.
  auto cold = device("c");
  cold.required_values[1].last_value = nullptr;
  e.put_device(cold);
  e.on_message("c", 20 * kSec, {});
  e.on_message("c", 21 * kSec, {});
  e.advance_to(21 * kSec + 2'500 * kMs);
  CHECK(metrics->value(metric::kMissingLastValue) == 2);
  CHECK(*e.timer("c").deadline == 21 * kSec + 3'600 * kMs);

  // Removal cancels; inactive devices are ignored.
  e.remove_device("c");
  CHECK_FALSE(e.has_device("c"));
  e.set_active("d", false);
  e.on_message("d", 30 * kSec, fields(1));
  e.on_message("d", 31 * kSec, fields(1));
  CHECK_FALSE(e.next_deadline());
  e.on_message("ghost", 32 * kSec, fields(1));
}

TEST_CASE("silence of D fires floor(D / I) times") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    Recorder rec;
    Engine e(rec.fn());
    e.put_device(device("d"));
    const TimestampNs gap = static_cast<TimestampNs>(1 + rng() % 6000) * kMs;
    e.on_message("d", 0, {});
    e.on_message("d", gap, {});
    const TimestampNs interval = *e.device("d").learned_interval;
    CHECK((interval - 200 * kMs) % kSec == 0);
    CHECK(interval >= 1'200 * kMs);
    const TimestampNs silence = static_cast<TimestampNs>(rng() % 60'000) * kMs;
    e.on_message("d", gap + silence, {});
    CHECK(static_cast<TimestampNs>(rec.out.size()) == silence / interval);
  }
}

TEST_CASE("engine matches the reference simulation") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    std::int64_t horizon = 0;
    const auto trace = twinforge::testing::random_trace(rng, 1 + static_cast<int>(rng() % 4), &horizon);
    const auto expected = twinforge::testing::reference_watchdog(trace, horizon);

    Recorder rec;
    Engine e(rec.fn());
    std::map<std::string, std::size_t> seen;
    for (const auto& m : trace) {
      if (!e.has_device(m.device)) e.put_device(device(m.device));
      e.on_message(m.device, m.t_ms * kMs, {});
      const auto& want = expected.intervals_ms.at(m.device).at(seen[m.device]++);
      const auto got = e.device(m.device).learned_interval;
      CHECK(got.has_value() == want.has_value());
      if (got && want) CHECK(*got == *want * kMs);
    }
    e.advance_to(horizon * kMs);

    std::vector<twinforge::testing::OracleDispatch> actual;
    for (const auto& d : rec.out) {
      CHECK(d.at % kMs == 0);
      actual.push_back({d.at / kMs, d.device_id});
    }
    REQUIRE(actual.size() == expected.dispatches.size());
    CHECK(actual == expected.dispatches);
  }
}

TEST_CASE("config json") {
  auto d = device("x");
  d.learned_interval = 3'200 * kMs;
  auto j = to_json(d, TimerState{true, 5});
  CHECK(j["learned_interval_s"] == 3.2);
  CHECK(j["timer"]["armed"] == true);
  CHECK(device_from_json(j) == d);
  CHECK_THROWS_AS(device_from_json(Json::parse(R"({"deviceId":"x"})")), Error);
  TenantConfig t{"t", true, {d}};
  auto back = tenant_from_json(to_json(t));
  CHECK(back.tenant_id == "t");
  CHECK(back.active);
  CHECK(back.devices == t.devices);
}

namespace {

template <typename F>
bool eventually(F&& f, std::chrono::milliseconds limit = 3000ms) {
  const auto end = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < end) {
    if (f()) return true;
    std::this_thread::sleep_for(2ms);
  }
  return f();
}

}  // namespace

TEST_CASE("watchdog service") {
  TempDir dir;
  bus::Bus bus{bus::Bus::Options{dir.path() / "bus"}};
  VirtualClock clock{1000 * kSec};
  auto metrics = std::make_shared<Metrics>();
  Watchdog::Options opts{dir.path() / "wd", store::Durability::Write, metrics, &clock, 5ms};

  auto msg = [&](const std::string& tenant, const std::string& dev, double v) {
    Envelope e{make_topic(parse_thing_id("t:" + dev), Channel::Commands, Action::Modify),
               "/features/v/properties/value", v, {}};
    bus.publish(gateway::telemetry_topic(tenant), {{header::kDeviceId, dev}}, to_json(e).dump());
  };

  {
    Watchdog wd(bus, opts);
    wd.create_tenant({"a", true, {device("d1")}});
    wd.create_tenant({"b", true, {}});
    wd.create_tenant({"c", false, {}});
    CHECK_THROWS_AS(wd.create_tenant({"a", false, {}}), Error);
    CHECK_THROWS_AS(wd.add_device("a", device("d1")), Error);
    CHECK_THROWS_AS(wd.add_device("zz", device("d1")), Error);
    CHECK(wd.supervisor_count() == 0);
    wd.start();
    CHECK(wd.supervisor_count() == 2);
    bus.create_topic(gateway::telemetry_topic("a"));
    std::this_thread::sleep_for(20ms);  // supervisors subscribe at the end

    msg("a", "d1", 4.0);
    REQUIRE(eventually([&] { return wd.device_json("a", "d1")["timer"]["armed"] == true; }));
    clock.advance(2'500 * kMs);
    msg("a", "d1", 5.0);
    REQUIRE(eventually([&] { return wd.device("a", "d1").learned_interval == 3'200 * kMs; }));
    CHECK(wd.device("a", "d1").required_values[1].last_value == 5.0);
    clock.advance(7 * kSec);
    REQUIRE(eventually([&] { return bus.has_topic("ml-in") && bus.topic_info("ml-in").end_offset == 2; }));
    auto out = bus.read("ml-in", 0, 10);
    CHECK(out[0].headers.at(header::kOriginator) == kOriginator);
    CHECK(out[0].headers.at(header::kDeviceId) == "d1");
    CHECK(decode_values({Format::Float64, Format::Float64}, out[1].payload)[1] == 5.0);

    // Deactivation stops the supervisor and keeps the config.
    wd.set_tenant_active("b", false);
    CHECK_FALSE(wd.supervising("b"));
    CHECK(wd.tenant("b").tenant_id == "b");
    wd.set_tenant_active("c", true);
    CHECK(wd.supervising("c"));
    wd.add_device("c", device("d9"));
    wd.delete_device("c", "d9");
    CHECK_THROWS_AS(wd.device("c", "d9"), Error);
    wd.set_tenant_active("b", true);
    wd.delete_tenant("c");
    CHECK_THROWS_AS(wd.tenant("c"), Error);
  }

  // Restart: both active tenants come back with the learned interval.
  Watchdog again(bus, opts);
  again.start();
  CHECK(again.supervisor_count() == 2);
  CHECK(again.device("a", "d1").learned_interval == 3'200 * kMs);
  CHECK(again.tenants().size() == 2);
}
