#include "twinforge/timeseries/sink.hpp"

#include "twinforge/bus/dead_letter.hpp"
#include "twinforge/core/error.hpp"

namespace twinforge::timeseries {

namespace {

void add_properties(std::vector<Point>& out, const Point& proto, const std::string& feature, const Json& props) {
  if (!props.is_object()) return;
  for (const auto& [name, v] : props.items()) {
    if (v.is_null() || !is_scalar_or_null(v)) continue;
    Point p = proto;
    p.feature = feature;
    p.property = name;
    p.value = v;
    out.push_back(std::move(p));
  }
}

void add_feature(std::vector<Point>& out, const Point& proto, const std::string& feature, const Json& f) {
  if (f.is_object()) add_properties(out, proto, feature, f.value("properties", Json()));
}

void add_features(std::vector<Point>& out, const Point& proto, const Json& features) {
  if (!features.is_object()) return;
  for (const auto& [name, f] : features.items()) add_feature(out, proto, name, f);
}

}  // namespace

std::vector<Point> decompose(const Envelope& event, TimestampNs timestamp, const std::string& originator) {
  const auto parts = parse_topic(event.topic);
  std::vector<Point> out;
  if (parts.action == Action::Delete) return out;
  const auto segs = split_path(event.path);
  Point proto{parts.thing_id, "", "", timestamp, nullptr, originator, 0};
  if (segs.empty()) {
    if (event.value.is_object()) add_features(out, proto, event.value.value("features", Json()));
  } else if (segs[0] != "features") {
    return out;
  } else if (segs.size() == 1) {
    add_features(out, proto, event.value);
  } else if (segs.size() == 2) {
    add_feature(out, proto, segs[1], event.value);
  } else if (segs.size() == 3 && segs[2] == "properties") {
    add_properties(out, proto, segs[1], event.value);
  } else if (segs.size() == 4 && segs[2] == "properties") {
    if (!event.value.is_null() && is_scalar_or_null(event.value)) {
      proto.feature = segs[1];
      proto.property = segs[3];
      proto.value = event.value;
      out.push_back(std::move(proto));
    }
  }
  return out;
}

Sink::Sink(bus::Bus& bus, Store& store, Options options) : bus_(bus), store_(store), options_(std::move(options)) {}

Sink::~Sink() { stop(); }

void Sink::start() {
  if (running_.exchange(true)) return;
  worker_ = std::thread([this] { run(); });
}

void Sink::stop() {
  if (!running_.exchange(false)) return;
  worker_.join();
  sub_.reset();
}

void Sink::run() {
  while (running_) {
    try {
      pump(std::chrono::milliseconds(100));
    } catch (const Error&) {
      std::this_thread::sleep_for(options_.retry_interval);
    }
  }
}

std::size_t Sink::pump(std::chrono::milliseconds wait) {
  try {
    if (!sub_) sub_.emplace(bus_.subscribe(options_.topic, options_.group));
    auto batch = sub_->poll_batch(options_.batch, wait);
    if (batch.empty()) return 0;
    std::vector<Point> points;
    const auto now = options_.clock->now();
    for (const auto& m : batch) {
      try {
        const auto e = envelope_from_json(Json::parse(m.payload));
        validate_envelope(e);
        auto header = [&](const char* key) -> std::optional<std::string> {
          if (auto it = e.headers.find(key); it != e.headers.end()) return it->second;
          if (auto it = m.headers.find(key); it != m.headers.end()) return it->second;
          return std::nullopt;
        };
        const auto ts_text = header(header::kTimestamp);
        const auto ts = ts_text ? bus::header_ns({{header::kTimestamp, *ts_text}}, header::kTimestamp, now) : now;
        for (auto& p : decompose(e, ts, header(header::kOriginator).value_or("unknown"))) {
          p.ingested_at = now;
          points.push_back(std::move(p));
        }
      } catch (const Error&) {
        options_.metrics->add(metric::kSinkMalformed);
      } catch (const Json::exception&) {
        options_.metrics->add(metric::kSinkMalformed);
      }
    }
    store_.write(points);
    options_.metrics->add(metric::kStored, points.size());
    sub_->commit();
    return batch.size();
  } catch (const Error&) {
    // Resume from the last commit.
    sub_.reset();
    throw;
  }
}

}  // namespace twinforge::timeseries
