#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "twinforge/core/clock.hpp"
#include "twinforge/core/envelope.hpp"
#include "twinforge/core/error.hpp"
#include "twinforge/core/policy.hpp"

using namespace twinforge;
using twinforge::testing::random_json;
using twinforge::testing::random_twin;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return Errc::IoError;
}

Envelope two_feature_modify() {
  return envelope_from_json(Json::parse(R"({
    "topic": "test/DHT22/things/twin/commands/modify",
    "path": "/features",
    "value": {
      "temperature": {"properties": {"value": "{0}"}},
      "humidity": {"properties": {"value": "{1}"}}
    }
  })"));
}

// Independent reference merge: rebuilds the result key by key instead of
// patching in place.
Json naive_merge(const Json& base, const Json& patch) {
  if (!base.is_object() || !patch.is_object()) return patch;
  Json out = Json::object();
  for (auto it = base.begin(); it != base.end(); ++it) {
    if (patch.contains(it.key())) out[it.key()] = naive_merge(it.value(), patch.at(it.key()));
    else out[it.key()] = it.value();
  }
  for (auto it = patch.begin(); it != patch.end(); ++it)
    if (!base.contains(it.key())) out[it.key()] = it.value();
  return out;
}

}  // namespace

TEST_CASE("parse_thing_id") {
  auto id = parse_thing_id("cepsa:LSRC3002.PF");
  CHECK(id.ns == "cepsa");
  CHECK(id.name == "LSRC3002.PF");
  CHECK(parse_thing_id("test:humidity_1") == ThingId{"test", "humidity_1"});
  CHECK(code_of([] { parse_thing_id("no_colon"); }) == Errc::MalformedId);
  CHECK(code_of([] { parse_thing_id("a:b:c"); }) == Errc::MalformedId);
  CHECK(code_of([] { parse_thing_id(":b"); }) == Errc::MalformedId);
  CHECK(code_of([] { parse_thing_id("a:"); }) == Errc::MalformedId);
  CHECK(code_of([] { parse_thing_id("a b:c"); }) == Errc::MalformedId);
}

TEST_CASE("thing id render/parse round trip") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    ThingId id{testing::random_ident(rng), testing::random_ident(rng)};
    CHECK(parse_thing_id(id.str()) == id);
    CHECK(parse_thing_id(id.str()).str() == id.str());
  }
}

TEST_CASE("validate_envelope") {
  CHECK_NOTHROW(validate_envelope(two_feature_modify()));

  Envelope empty_path{"a/b/things/twin/commands/modify", "", Json::object(), {}};
  CHECK(code_of([&] { validate_envelope(empty_path); }) == Errc::BadPath);

  Envelope short_topic{"a/things/twin/commands/modify", "/features", Json::object(), {}};
  CHECK(code_of([&] { validate_envelope(short_topic); }) == Errc::BadTopic);

  SUBCASE("value shapes") {
    Envelope e{"a/b/things/twin/commands/modify", "/features/t/properties/value", Json::object(), {}};
    CHECK(code_of([&] { validate_envelope(e); }) == Errc::BadValue);
    e.value = 3.5;
    CHECK_NOTHROW(validate_envelope(e));
    e.path = "/features/t/nope/value";
    CHECK(code_of([&] { validate_envelope(e); }) == Errc::BadPath);
    e.path = "/unknown";
    CHECK(code_of([&] { validate_envelope(e); }) == Errc::BadPath);
    e.path = "/features//x";
    CHECK(code_of([&] { validate_envelope(e); }) == Errc::BadPath);
    e.topic = "a/b/things/twin/live/modify";
    CHECK(code_of([&] { validate_envelope(e); }) == Errc::BadTopic);
  }
  SUBCASE("delete carries no value") {
    Envelope e{"a/b/things/twin/events/delete", "/", nullptr, {}};
    CHECK_NOTHROW(validate_envelope(e));
    e.value = 1;
    CHECK(code_of([&] { validate_envelope(e); }) == Errc::BadValue);
  }
}

TEST_CASE("apply_envelope") {
  TwinRecord t;
  t.thing_id = {"test", "DHT22"};
  t.policy_id = "test:p";
  t.features["temperature"].properties["value"] = 1.0;

  SUBCASE("leaf replace") {
    Envelope e{"test/DHT22/things/twin/commands/modify", "/features/temperature/properties/value", 2.0, {}};
    auto out = apply_envelope(t, e);
    CHECK(out.features.at("temperature").properties.at("value") == 2.0);
  }

  SUBCASE("object merge at /features matches the reference merge") {
    Envelope e{"test/DHT22/things/twin/commands/modify", "/features",
               Json::parse(R"({"humidity":{"properties":{"value":5}}})"), {}};
    auto out = apply_envelope(t, e);
    CHECK(out.features.size() == 2);
    CHECK(out.features.at("humidity").properties.at("value") == 5);
    CHECK(out.features.at("temperature").properties.at("value") == 1.0);
    Json expected = to_json(t);
    expected["features"] = naive_merge(expected["features"], e.value);
    CHECK(to_json(out) == expected);
  }

  SUBCASE("managed attributes are rejected") {
    Envelope e{"test/DHT22/things/twin/commands/modify", "/attributes/isType", true, {}};
    CHECK(code_of([&] { apply_envelope(t, e); }) == Errc::ManagedAttributeViolation);
    e.path = "/attributes";
    e.value = Json{{"children", Json::object()}};
    CHECK(code_of([&] { apply_envelope(t, e); }) == Errc::ManagedAttributeViolation);
    e.path = "/";
    e.value = Json{{"attributes", {{"parent", "x:y"}}}};
    CHECK(code_of([&] { apply_envelope(t, e); }) == Errc::ManagedAttributeViolation);
  }

  SUBCASE("path through a scalar") {
    t.attributes["units"] = "m3/d";
    Envelope e{"test/DHT22/things/twin/commands/modify", "/attributes/units", Json{{"a", 1}}, {}};
    CHECK(code_of([&] { apply_envelope(t, e); }) == Errc::PathNotApplicable);
    e.path = "/attributes/units/deeper";
    e.value = 1;
    CHECK(code_of([&] { apply_envelope(t, e); }) == Errc::PathNotApplicable);
  }

  SUBCASE("wrong twin") {
    Envelope e{"test/other/things/twin/commands/modify", "/features/temperature/properties/value", 2.0, {}};
    CHECK(code_of([&] { apply_envelope(t, e); }) == Errc::BadTopic);
  }

  SUBCASE("missing intermediates are created") {
    Envelope e{"test/DHT22/things/twin/commands/modify", "/features/pressure/properties/value", 7, {}};
    auto out = apply_envelope(t, e);
    CHECK(out.features.at("pressure").properties.at("value") == 7);
  }
}

TEST_CASE("arbitrary merges agree with the reference merge") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    Json a = random_json(rng, 3), b = random_json(rng, 3);
    Json merged = a;
    merge_into(merged, b);
    CHECK(merged == naive_merge(a, b));
  }
}

TEST_CASE("leaf modify is idempotent") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 300; ++i) {
    auto t = random_twin(rng);
    Envelope e{make_topic(t.thing_id, Channel::Commands, Action::Modify),
               "/features/" + testing::random_ident(rng) + "/properties/value", testing::random_scalar(rng), {}};
    REQUIRE(is_valid_envelope(e));
    auto once = apply_envelope(t, e);
    CHECK(apply_envelope(once, e) == once);
  }
}

TEST_CASE("serialization round trips") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 500; ++i) {
    auto t = random_twin(rng);
    CHECK(twin_from_json(Json::parse(to_json(t).dump())) == t);

    Envelope e{make_topic(t.thing_id, Channel::Events, Action::Modify), "/attributes", random_json(rng, 2), {}};
    if (!e.value.is_object()) e.value = Json::object();
    e.headers[header::kOriginator] = testing::random_ident(rng);
    CHECK(envelope_from_json(Json::parse(to_json(e).dump())) == e);
  }
}

TEST_CASE("sensor twin document parses") {
  auto t = twin_from_json(Json::parse(R"({
    "thingId": "cepsa:LSRC3002.PF",
    "policyId": "cepsa:basic_policy",
    "attributes": {"name": "LSRC3002.PF", "description": "Unit load", "units": "m3/d"},
    "features": {"last_measured": {"properties": {"value": null, "time": null}}}
  })"));
  CHECK(t.thing_id.str() == "cepsa:LSRC3002.PF");
  CHECK(t.features.at("last_measured").properties.size() == 2);
  CHECK(code_of([] {
          twin_from_json(Json::parse(R"({"thingId":"a:b","features":{"f":{"properties":{"v":{"nested":1}}}}})"));
        }) == Errc::BadValue);
}

TEST_CASE("policy") {
  Policy p{"cepsa:basic_policy", {{"gateway", {true, true}}, {"viewer", {true, false}}}};
  CHECK_NOTHROW(validate_policy(p));
  CHECK(p.can_write("gateway"));
  CHECK_FALSE(p.can_write("viewer"));
  CHECK(p.can_read("viewer"));
  CHECK_FALSE(p.can_read("nobody"));
  CHECK(policy_from_json(to_json(p)) == p);
  Policy readonly{"x:y", {{"viewer", {true, false}}}};
  CHECK(code_of([&] { validate_policy(readonly); }) == Errc::InvalidArgument);

  Policy wild{"x:y", {{"ml-bridge:*", {true, true}}, {"ops:*", {true, false}}, {"ops:admin", {false, true}}}};
  CHECK(wild.can_write("ml-bridge:r1"));
  CHECK_FALSE(wild.can_write("ml-bridge"));
  CHECK_FALSE(wild.can_write("ml-bridgeX:r1"));
  CHECK(wild.can_read("ops:anyone"));
  CHECK_FALSE(wild.can_write("ops:anyone"));
  CHECK(wild.can_write("ops:admin"));
}

TEST_CASE("iso8601") {
  CHECK(parse_iso8601("1970-01-01T00:00:00Z") == 0);
  CHECK(parse_iso8601("2024-01-02T00:00:00Z") == 1704153600LL * kNsPerSecond);
  CHECK(parse_iso8601("2024-01-02T01:00:00+01:00") == 1704153600LL * kNsPerSecond);
  CHECK(parse_iso8601("2024-01-02T00:00:00.5Z") == 1704153600LL * kNsPerSecond + 500'000'000);
  CHECK(format_iso8601(1704153600LL * kNsPerSecond) == "2024-01-02T00:00:00Z");
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const TimestampNs t = std::uniform_int_distribution<TimestampNs>(0, 4'000'000'000LL * kNsPerSecond)(rng);
    CHECK(parse_iso8601(format_iso8601(t)) == t);
  }
  CHECK(code_of([] { parse_iso8601("2024-13-01T00:00:00Z"); }) == Errc::BadValue);
  CHECK(code_of([] { parse_iso8601("2024-01-01T00:00:00"); }) == Errc::BadValue);
}

TEST_CASE("documented wire examples round-trip byte for byte") {
  const std::string twin =
      R"({"attributes":{"children":{},"parent":null,"type":"cepsa:sensor_type"},"features":{"last_measured":{"properties":{"time":"2022-11-10T10:00:00Z","value":178.4}}},"policyId":"cepsa:policy","thingId":"cepsa:LSRC3002.PF"})";
  CHECK(to_json(twin_from_json(Json::parse(twin))).dump() == twin);

  const std::string envelope =
      R"({"headers":{"correlation-id":"c-1","x-ts":"1668074400000000000"},"path":"/features","topic":"test/DHT22/things/twin/commands/modify","value":{"humidity":{"properties":{"value":52.0}},"temperature":{"properties":{"value":21.5}}}})";
  const auto e = envelope_from_json(Json::parse(envelope));
  CHECK_NOTHROW(validate_envelope(e));
  CHECK(to_json(e).dump() == envelope);

  const std::string policy =
      R"({"entries":{"gateway":{"read":true,"write":true},"ml-bridge:*":{"read":true,"write":true}},"policyId":"cepsa:policy"})";
  const auto p = policy_from_json(Json::parse(policy));
  CHECK(to_json(p).dump() == policy);
  CHECK(p.can_write("ml-bridge:double"));

  CHECK(format_iso8601(1704164645000000123) == "2024-01-02T03:04:05.000000123Z");
  CHECK(format_iso8601(1704164645000000000) == "2024-01-02T03:04:05Z");
  CHECK(parse_iso8601("2024-01-02T05:04:05+02:00") == 1704164645000000000);
}
