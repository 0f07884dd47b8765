#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>

namespace twinforge {

// UTC nanoseconds since the Unix epoch.
using TimestampNs = std::int64_t;

constexpr TimestampNs kNsPerSecond = 1'000'000'000;

class Clock {
 public:
  virtual ~Clock() = default;
  virtual TimestampNs now() const = 0;
};

class SystemClock final : public Clock {
 public:
  TimestampNs now() const override {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  }
};

// Manually advanced clock for deterministic tests.
class VirtualClock final : public Clock {
 public:
  explicit VirtualClock(TimestampNs start = 0) : now_(start) {}
  TimestampNs now() const override { return now_.load(); }
  void set(TimestampNs t) { now_.store(t); }
  void advance(TimestampNs dt) { now_.fetch_add(dt); }

 private:
  std::atomic<TimestampNs> now_;
};

const Clock& system_clock();

// "2024-01-02T03:04:05.000000123Z". Fraction digits are dropped when zero.
std::string format_iso8601(TimestampNs t);
// Accepts "YYYY-MM-DDTHH:MM:SS[.fraction](Z|±HH:MM)". Throws Error(BadValue).
TimestampNs parse_iso8601(std::string_view text);

}  // namespace twinforge
