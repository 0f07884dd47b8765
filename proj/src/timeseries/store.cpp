#include "twinforge/timeseries/store.hpp"

#include <mutex>

#include "twinforge/core/error.hpp"

namespace twinforge::timeseries {

namespace fs = std::filesystem;

namespace {

constexpr char kSeparator = '~';

std::string file_name(const SeriesKey& k) {
  return store::escape_name(k.thing_id.str()) + kSeparator + store::escape_name(k.feature) + kSeparator +
         store::escape_name(k.property) + ".ts";
}

std::optional<SeriesKey> parse_file_name(const fs::path& p) {
  if (p.extension() != ".ts") return std::nullopt;
  const auto stem = p.stem().string();
  const auto a = stem.find(kSeparator);
  const auto b = a == std::string::npos ? a : stem.find(kSeparator, a + 1);
  if (b == std::string::npos) return std::nullopt;
  try {
    return SeriesKey{parse_thing_id(store::unescape_name(stem.substr(0, a))),
                     store::unescape_name(stem.substr(a + 1, b - a - 1)), store::unescape_name(stem.substr(b + 1))};
  } catch (const Error&) {
    return std::nullopt;
  }
}

struct Sample {
  Json value;
  TimestampNs ingested_at;
};

std::string encode(const Point& p) {
  std::string body;
  store::put_u64(body, static_cast<std::uint64_t>(p.timestamp));
  store::put_u64(body, static_cast<std::uint64_t>(p.ingested_at));
  store::put_u32(body, static_cast<std::uint32_t>(p.originator.size()));
  body.append(p.originator);
  const auto v = p.value.dump();
  store::put_u32(body, static_cast<std::uint32_t>(v.size()));
  body.append(v);
  return body;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

}  // namespace

struct Store::Series {
  store::RecordWriter writer;
  // (timestamp, originator) -> sample
  std::map<std::pair<TimestampNs, std::string>, Sample> points;
};

Store::Store(fs::path dir, store::Durability durability) : dir_(std::move(dir)), durability_(durability) {
  fs::create_directories(dir_);
  for (const auto& entry : fs::directory_iterator(dir_)) {
    auto key = parse_file_name(entry.path());
    if (!key) continue;
    auto s = std::make_unique<Series>();
    store::scan_records(entry.path(), [&](std::uint64_t, std::string_view body) {
      std::size_t pos = 0;
      const auto ts = static_cast<TimestampNs>(store::get_u64(body, pos));
      const auto ingested = static_cast<TimestampNs>(store::get_u64(body, pos));
      std::string originator(store::get_bytes(body, pos, store::get_u32(body, pos)));
      const auto v = store::get_bytes(body, pos, store::get_u32(body, pos));
      s->points[{ts, std::move(originator)}] = Sample{Json::parse(v), ingested};
    });
    s->writer = store::RecordWriter(entry.path(), durability_);
    count_ += s->points.size();
    series_.emplace(std::move(*key), std::move(s));
  }
}

Store::~Store() = default;

Store::Series& Store::open_series(const SeriesKey& key) {
  auto it = series_.find(key);
  if (it != series_.end()) return *it->second;
  auto s = std::make_unique<Series>();
  s->writer = store::RecordWriter(dir_ / file_name(key), durability_);
  return *series_.emplace(key, std::move(s)).first->second;
}

std::size_t Store::write(const std::vector<Point>& points) {
  std::unique_lock lock(mu_);
  std::size_t added = 0;
  for (const auto& p : points) {
    if (!is_scalar_or_null(p.value)) throw Error(Errc::BadValue, "time series values must be scalars");
    auto& s = open_series(SeriesKey{p.thing_id, p.feature, p.property});
    s.writer.append(encode(p));
    auto [it, inserted] = s.points.insert_or_assign({p.timestamp, p.originator}, Sample{p.value, p.ingested_at});
    if (inserted) ++added;
  }
  count_ += added;
  return added;
}

std::vector<Point> Store::query(const Query& q) const {
  if (q.from > q.to) throw Error(Errc::InvalidArgument, "query range is reversed");
  std::shared_lock lock(mu_);
  std::vector<Point> out;
  auto it = series_.find(SeriesKey{q.thing_id, q.feature, q.property});
  if (it == series_.end()) return out;
  const auto& pts = it->second->points;
  for (auto p = pts.lower_bound({q.from, std::string()}); p != pts.end() && p->first.first <= q.to; ++p) {
    if (q.originator && p->first.second != *q.originator) continue;
    out.push_back(Point{q.thing_id, q.feature, q.property, p->first.first, p->second.value, p->first.second,
                        p->second.ingested_at});
  }
  return out;
}

std::vector<SeriesKey> Store::series() const {
  std::shared_lock lock(mu_);
  std::vector<SeriesKey> out;
  for (const auto& [k, _] : series_) out.push_back(k);
  return out;
}

std::vector<Point> Store::scan() const {
  std::shared_lock lock(mu_);
  std::vector<Point> out;
  out.reserve(count_);
  for (const auto& [k, s] : series_)
    for (const auto& [key, sample] : s->points)
      out.push_back(Point{k.thing_id, k.feature, k.property, key.first, sample.value, key.second, sample.ingested_at});
  return out;
}

std::size_t Store::size() const {
  std::shared_lock lock(mu_);
  return count_;
}

Json to_json(const Point& p) {
  return Json{{"thingId", p.thing_id.str()}, {"feature", p.feature},      {"property", p.property},
              {"timestamp", p.timestamp},    {"time", format_iso8601(p.timestamp)}, {"originator", p.originator},
              {"value", p.value},            {"ingestedAt", p.ingested_at}};
}

std::string to_jsonl(const std::vector<Point>& points) {
  std::string out;
  for (const auto& p : points) out += to_json(p).dump() + "\n";
  return out;
}

std::string to_csv(const std::vector<Point>& points) {
  std::string out = "thing_id,feature,property,timestamp_ns,time,originator,value\n";
  for (const auto& p : points) {
    out += csv_field(p.thing_id.str()) + "," + csv_field(p.feature) + "," + csv_field(p.property) + "," +
           std::to_string(p.timestamp) + "," + format_iso8601(p.timestamp) + "," + csv_field(p.originator) + "," +
           csv_field(p.value.is_string() ? p.value.get<std::string>() : p.value.dump()) + "\n";
  }
  return out;
}

}  // namespace twinforge::timeseries
