#pragma once

#include <filesystem>
#include <limits>
#include <memory>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "twinforge/core/clock.hpp"
#include "twinforge/core/thing_id.hpp"
#include "twinforge/core/twin.hpp"
#include "twinforge/store/record_file.hpp"

namespace twinforge::timeseries {

struct SeriesKey {
  ThingId thing_id;
  std::string feature;
  std::string property;

  auto operator<=>(const SeriesKey&) const = default;
};

struct Point {
  ThingId thing_id;
  std::string feature;
  std::string property;
  TimestampNs timestamp = 0;
  Json value;
  std::string originator;
  TimestampNs ingested_at = 0;  // when the sink stored it

  bool operator==(const Point&) const = default;
};

struct Query {
  ThingId thing_id;
  std::string feature;
  std::string property;
  TimestampNs from = std::numeric_limits<TimestampNs>::min();
  TimestampNs to = std::numeric_limits<TimestampNs>::max();  // inclusive
  std::optional<std::string> originator;
};

// Per-series append files plus an in-memory index rebuilt on open. A point
// is identified by (series, timestamp, originator); writing the same key
// again replaces the value.
class Store {
 public:
  explicit Store(std::filesystem::path dir, store::Durability durability = store::Durability::Write);
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  // Returns how many points were new keys. Durable on return.
  std::size_t write(const std::vector<Point>& points);

  // Ascending by timestamp, then originator. Throws Error(InvalidArgument)
  // when from > to.
  std::vector<Point> query(const Query& q) const;
  std::vector<SeriesKey> series() const;
  // Every point, ordered by series then timestamp.
  std::vector<Point> scan() const;
  std::size_t size() const;

 private:
  struct Series;
  Series& open_series(const SeriesKey& key);

  std::filesystem::path dir_;
  store::Durability durability_;
  mutable std::shared_mutex mu_;
  std::map<SeriesKey, std::unique_ptr<Series>> series_;
  std::size_t count_ = 0;
};

Json to_json(const Point& p);
// One JSON object per line.
std::string to_jsonl(const std::vector<Point>& points);
// Header line then thing_id,feature,property,timestamp_ns,time,originator,value.
std::string to_csv(const std::vector<Point>& points);

}  // namespace twinforge::timeseries
