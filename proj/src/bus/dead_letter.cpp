#include "twinforge/bus/dead_letter.hpp"

#include <charconv>

#include "twinforge/core/envelope.hpp"

namespace twinforge::bus {

void dead_letter(Bus& bus, Metrics& metrics, const std::string& source, const std::string& reason, Headers headers,
                 std::string_view payload) noexcept {
  metrics.add(metric::kDeadLettered);
  try {
    headers["dead-letter-source"] = source;
    headers["dead-letter-reason"] = reason;
    bus.publish(kDeadLetterTopic, headers, payload);
  } catch (...) {
  }
}

std::int64_t header_ns(const Headers& headers, const std::string& key, std::int64_t fallback) noexcept {
  auto it = headers.find(key);
  if (it == headers.end()) return fallback;
  std::int64_t v = 0;
  const auto& s = it->second;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return fallback;
  return v;
}

Headers propagate(const Headers& from) {
  Headers out;
  for (const char* key : {header::kTimestamp, header::kCorrelation, header::kDeviceId})
    if (auto it = from.find(key); it != from.end()) out[key] = it->second;
  return out;
}

}  // namespace twinforge::bus
