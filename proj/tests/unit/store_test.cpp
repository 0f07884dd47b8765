#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "twinforge/store/kv_log.hpp"

using namespace twinforge;
using namespace twinforge::store;
using twinforge::testing::TempDir;

TEST_CASE("kv log survives reopen") {
  TempDir dir;
  const auto path = dir / "registry.kv";
  {
    KvLog kv(path);
    kv.put("thing/a:b", {{"x", 1}});
    kv.put("thing/a:c", {{"x", 2}});
    kv.erase("thing/a:b");
    kv.commit({KvLog::Op{"policy/p", std::optional<nlohmann::json>(std::in_place, nlohmann::json{{"w", true}})}, KvLog::Op{"thing/a:c", std::nullopt}});
  }
  KvLog kv(path);
  CHECK_FALSE(kv.contains("thing/a:b"));
  CHECK_FALSE(kv.contains("thing/a:c"));
  REQUIRE(kv.get("policy/p"));
  CHECK(kv.get("policy/p")->at("w") == true);
}

TEST_CASE("kv log drops a torn tail") {
  TempDir dir;
  const auto path = dir / "k.kv";
  {
    KvLog kv(path);
    kv.put("a", 1);
    kv.put("b", 2);
  }
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 3);
  {
    KvLog kv(path);
    CHECK(kv.get("a") == nlohmann::json(1));
    CHECK_FALSE(kv.contains("b"));
    kv.put("c", 3);
  }
  KvLog kv(path);
  CHECK(kv.contains("a"));
  CHECK(kv.contains("c"));
}

TEST_CASE("kv log compaction keeps live data") {
  TempDir dir;
  const auto path = dir / "k.kv";
  KvLog kv(path);
  for (int i = 0; i < 200; ++i) kv.put("k" + std::to_string(i % 10), i);
  const auto before = kv.log_bytes();
  kv.compact();
  CHECK(kv.log_bytes() < before);
  KvLog reopened(path);
  CHECK(reopened.data().size() == 10);
  CHECK(reopened.get("k9") == nlohmann::json(199));
}

TEST_CASE("scan by prefix") {
  TempDir dir;
  KvLog kv(dir / "k.kv");
  kv.put("thing/b", 1);
  kv.put("thing/a", 2);
  kv.put("type/a", 3);
  auto rows = kv.scan("thing/");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].first == "thing/a");
}

TEST_CASE("name escaping round trips") {
  for (std::string s : {"telemetry/cepsa-mqtt", "a b", "%", ".hidden", "x.y", "ümlaut"})
    CHECK(unescape_name(escape_name(s)) == s);
  CHECK(escape_name("telemetry/t1").find('/') == std::string::npos);
}
