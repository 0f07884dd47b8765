#include <random>
#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "twinforge/core/error.hpp"
#include "twinforge/registry/registry.hpp"
#include "twinforge/timeseries/sink.hpp"
#include "twinforge/timeseries/store.hpp"

using namespace twinforge;
using namespace twinforge::timeseries;
using namespace std::chrono_literals;
using twinforge::testing::TempDir;

namespace {

Envelope event(const std::string& id, const std::string& path, Json value, std::map<std::string, std::string> h = {}) {
  return Envelope{make_topic(parse_thing_id(id), Channel::Events, Action::Modify), path, std::move(value),
                  std::move(h)};
}

Point point(const std::string& id, TimestampNs ts, double v, const std::string& originator = "gateway") {
  return Point{parse_thing_id(id), "f", "value", ts, Json(v), originator, 0};
}

}  // namespace

TEST_CASE("decompose") {
  auto pts = decompose(event("a:b", "/features",
                             Json::parse(R"({"temperature":{"properties":{"value":2}},"humidity":{"properties":{"value":5}}})")),
                       7, "gateway");
  REQUIRE(pts.size() == 2);
  std::set<std::string> features{pts[0].feature, pts[1].feature};
  CHECK(features == std::set<std::string>{"humidity", "temperature"});
  CHECK(pts[0].timestamp == 7);

  auto ml = decompose(event("a:b", "/features/t/properties/value", 1.5), 1, "ml-bridge");
  REQUIRE(ml.size() == 1);
  CHECK(ml[0].originator == "ml-bridge");
  CHECK(ml[0].property == "value");

  CHECK(decompose(event("a:b", "/features/t/properties/value", nullptr), 1, "g").empty());
  CHECK(decompose(event("a:b", "/attributes/x", 1), 1, "g").empty());
  CHECK(decompose(event("a:b", "/features/t", Json::parse(R"({"properties":{"a":1,"b":null}})")), 1, "g").size() == 1);
  CHECK(decompose(event("a:b", "/features/t/properties", Json::parse(R"({"a":1,"b":"x"})")), 1, "g").size() == 2);
  Envelope create{make_topic(parse_thing_id("a:b"), Channel::Events, Action::Create), "/",
                  Json::parse(R"({"thingId":"a:b","features":{"t":{"properties":{"value":3}}}})"), {}};
  CHECK(decompose(create, 1, "g").size() == 1);
  Envelope del{make_topic(parse_thing_id("a:b"), Channel::Events, Action::Delete), "/", nullptr, {}};
  CHECK(decompose(del, 1, "g").empty());
}

TEST_CASE("store queries") {
  TempDir dir;
  Store store(dir.path());
  CHECK(store.query({parse_thing_id("a:b"), "f", "value"}).empty());
  store.write({point("a:b", 1, 1.0), point("a:b", 2, 2.0), point("a:b", 3, 3.0)});
  auto q = store.query({parse_thing_id("a:b"), "f", "value", 2, 3});
  REQUIRE(q.size() == 2);
  CHECK(q[0].timestamp == 2);
  CHECK(q[1].value == 3.0);
  CHECK(store.query({parse_thing_id("a:b"), "f", "value", 5, 9}).empty());
  CHECK_THROWS_AS(store.query({parse_thing_id("a:b"), "f", "value", 3, 2}), Error);

  // Same key replaces, different originator is a separate point.
  CHECK(store.write({point("a:b", 2, 20.0)}) == 0);
  CHECK(store.write({point("a:b", 2, 2.5, "ml-bridge:r1")}) == 1);
  CHECK(store.size() == 4);
  auto gw = store.query({parse_thing_id("a:b"), "f", "value", 0, 10, "gateway"});
  CHECK(gw.size() == 3);
  CHECK(gw[1].value == 20.0);
}

TEST_CASE("query matches a filtered full scan") {
  std::mt19937_64 rng(11);
  TempDir dir;
  Store store(dir.path());
  const std::vector<std::string> things{"x:a", "x:b"};
  const std::vector<std::string> originators{"gateway", "ml-bridge:r"};
  std::vector<Point> all;
  for (int i = 0; i < 600; ++i) {
    Point p{parse_thing_id(things[rng() % 2]), "f", i % 3 ? "value" : "time",
            static_cast<TimestampNs>(rng() % 200), Json(static_cast<double>(i)), originators[rng() % 2], 0};
    all.push_back(p);
    store.write({p});
  }
  // Last write per key wins.
  std::map<std::tuple<std::string, std::string, TimestampNs, std::string>, Point> latest;
  for (const auto& p : all) latest[{p.thing_id.str(), p.property, p.timestamp, p.originator}] = p;
  CHECK(store.size() == latest.size());

  for (int trial = 0; trial < 200; ++trial) {
    Query q{parse_thing_id(things[rng() % 2]), "f", rng() % 2 ? "value" : "time"};
    q.from = static_cast<TimestampNs>(rng() % 200);
    q.to = q.from + static_cast<TimestampNs>(rng() % 80);
    if (rng() % 2) q.originator = originators[rng() % 2];
    std::vector<Point> expected;
    for (const auto& [_, p] : latest)
      if (p.thing_id == q.thing_id && p.property == q.property && p.timestamp >= q.from && p.timestamp <= q.to &&
          (!q.originator || p.originator == *q.originator))
        expected.push_back(p);
    std::stable_sort(expected.begin(), expected.end(), [](const Point& a, const Point& b) {
      return std::tie(a.timestamp, a.originator) < std::tie(b.timestamp, b.originator);
    });
    CHECK(store.query(q) == expected);
  }
}

TEST_CASE("store reloads from disk") {
  TempDir dir;
  std::vector<Point> before;
  {
    Store store(dir.path());
    store.write({point("odd.ns:na~me-%", 5, 1.0), point("a:b", 1, 2.0)});
    Point s = point("a:b", 9, 0);
    s.feature = "weird feature~x";
    s.value = "text";
    store.write({s});
    before = store.scan();
  }
  Store again(dir.path());
  CHECK(again.scan() == before);
  CHECK(again.size() == 3);
}

TEST_CASE("exports") {
  std::vector<Point> pts{point("a:b", 1'000'000'000, 1.5), point("a:b", 2'000'000'000, 2.5, "ml,bridge")};
  const auto csv = to_csv(pts);
  CHECK(csv.rfind("thing_id,feature,property,timestamp_ns,time,originator,value\n", 0) == 0);
  CHECK(csv.find("a:b,f,value,1000000000,1970-01-01T00:00:01Z,gateway,1.5\n") != std::string::npos);
  CHECK(csv.find("\"ml,bridge\"") != std::string::npos);
  const auto jl = to_jsonl(pts);
  CHECK(std::count(jl.begin(), jl.end(), '\n') == 2);
  CHECK(Json::parse(jl.substr(0, jl.find('\n')))["originator"] == "gateway");
}

TEST_CASE("sink stores every leaf once across restarts") {
  TempDir dir;
  bus::Bus bus{bus::Bus::Options{dir.path() / "bus"}};
  auto metrics = std::make_shared<Metrics>();
  VirtualClock clock{5};
  auto store = std::make_unique<Store>(dir.path() / "ts");

  // 27 sensors x 100 events, each writing value + a null time.
  const int kSensors = 27, kEvents = 100;
  std::size_t published = 0;
  auto publish_some = [&](int from, int to) {
    for (int i = from; i < to; ++i)
      for (int s = 0; s < kSensors; ++s) {
        auto e = event("plant:s" + std::to_string(s), "/features/last_measured/properties",
                       Json{{"value", i * 0.01}, {"time", nullptr}},
                       {{"ditto-originator", "gateway"}, {"x-ts", std::to_string(1000 + i)}});
        bus.publish(registry::kEventTopic, e.headers, to_json(e).dump());
        ++published;
      }
  };
  bus.publish(registry::kEventTopic, {}, "{not json");
  publish_some(0, 40);
  {
    Sink sink(bus, *store, Sink::Options{registry::kEventTopic, "ts", metrics, &clock, 100});
    sink.pump(0ms);
    sink.pump(0ms);
  }
  // Sink restart with a reopened store, and a duplicate replay of the first window.
  store = std::make_unique<Store>(dir.path() / "ts");
  bus.commit_offset(registry::kEventTopic, "ts", 50);
  publish_some(40, kEvents);
  {
    Sink sink(bus, *store, Sink::Options{registry::kEventTopic, "ts", metrics, &clock, 100});
    sink.start();
    for (int i = 0; i < 400 && bus.committed_offset(registry::kEventTopic, "ts") < published + 1; ++i)
      std::this_thread::sleep_for(5ms);
    sink.stop();
  }
  CHECK(store->size() == static_cast<std::size_t>(kSensors * kEvents));
  CHECK(metrics->value(metric::kSinkMalformed) == 1);
  std::set<std::pair<std::string, TimestampNs>> keys;
  for (const auto& p : store->scan()) {
    CHECK(p.originator == "gateway");
    CHECK(p.property == "value");
    keys.insert({p.thing_id.str(), p.timestamp});
  }
  CHECK(keys.size() == static_cast<std::size_t>(kSensors * kEvents));
}

TEST_CASE("sink without x-ts uses arrival time") {
  TempDir dir;
  bus::Bus bus{bus::Bus::Options{dir.path() / "bus"}};
  Store store(dir.path() / "ts");
  VirtualClock clock{42};
  auto e = event("a:b", "/features/f/properties/value", 1.0);
  bus.publish(registry::kEventTopic, {}, to_json(e).dump());
  Sink sink(bus, store, Sink::Options{registry::kEventTopic, "ts", std::make_shared<Metrics>(), &clock});
  CHECK(sink.pump(0ms) == 1);
  auto pts = store.scan();
  REQUIRE(pts.size() == 1);
  CHECK(pts[0].timestamp == 42);
  CHECK(pts[0].originator == "unknown");
}

TEST_CASE("documented point encoding") {
  const timeseries::Point p{parse_thing_id("test:DHT22"), "temperature", "value", 1668074400000000000, 21.5,
                            "gateway", 1668074400012000000};
  CHECK(timeseries::to_json(p).dump() ==
        R"({"feature":"temperature","ingestedAt":1668074400012000000,"originator":"gateway","property":"value","thingId":"test:DHT22","time":"2022-11-10T10:00:00Z","timestamp":1668074400000000000,"value":21.5})");
  CHECK(timeseries::to_csv({p}) ==
        "thing_id,feature,property,timestamp_ns,time,originator,value\n"
        "test:DHT22,temperature,value,1668074400000000000,2022-11-10T10:00:00Z,gateway,21.5\n");
}
