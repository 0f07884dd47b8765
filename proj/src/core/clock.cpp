#include "twinforge/core/clock.hpp"

#include <charconv>
#include <cstdio>

#include "twinforge/core/error.hpp"

namespace twinforge {

namespace chr = std::chrono;

const Clock& system_clock() {
  static const SystemClock clock;
  return clock;
}

std::string format_iso8601(TimestampNs t) {
  const auto tp = chr::sys_time<chr::nanoseconds>(chr::nanoseconds(t));
  const auto day = chr::floor<chr::days>(tp);
  const chr::year_month_day ymd(day);
  const chr::hh_mm_ss hms(tp - day);
  char buf[64];
  int n = std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02lld",
                        static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                        static_cast<unsigned>(ymd.day()), static_cast<long>(hms.hours().count()),
                        static_cast<long>(hms.minutes().count()),
                        static_cast<long long>(hms.seconds().count()));
  const auto frac = hms.subseconds().count();
  if (frac != 0) n += std::snprintf(buf + n, sizeof buf - n, ".%09lld", static_cast<long long>(frac));
  std::string out(buf, n);
  out += 'Z';
  return out;
}

namespace {

int take_int(std::string_view text, std::size_t& pos, std::size_t digits) {
  if (pos + digits > text.size()) throw Error(Errc::BadValue, "truncated timestamp '" + std::string(text) + "'");
  int v = 0;
  auto [p, ec] = std::from_chars(text.data() + pos, text.data() + pos + digits, v);
  if (ec != std::errc() || p != text.data() + pos + digits)
    throw Error(Errc::BadValue, "bad digits in timestamp '" + std::string(text) + "'");
  pos += digits;
  return v;
}

void expect(std::string_view text, std::size_t& pos, char c) {
  if (pos >= text.size() || text[pos] != c)
    throw Error(Errc::BadValue, std::string("expected '") + c + "' in timestamp '" + std::string(text) + "'");
  ++pos;
}

}  // namespace

TimestampNs parse_iso8601(std::string_view text) {
  std::size_t pos = 0;
  const int y = take_int(text, pos, 4);
  expect(text, pos, '-');
  const int mo = take_int(text, pos, 2);
  expect(text, pos, '-');
  const int d = take_int(text, pos, 2);
  if (pos >= text.size() || (text[pos] != 'T' && text[pos] != ' '))
    throw Error(Errc::BadValue, "expected 'T' in timestamp '" + std::string(text) + "'");
  ++pos;
  const int h = take_int(text, pos, 2);
  expect(text, pos, ':');
  const int mi = take_int(text, pos, 2);
  expect(text, pos, ':');
  const int s = take_int(text, pos, 2);
  std::int64_t frac_ns = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    std::int64_t scale = 100'000'000;
    std::size_t start = pos;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      frac_ns += (text[pos] - '0') * scale;
      scale /= 10;
      ++pos;
    }
    if (pos == start) throw Error(Errc::BadValue, "empty fraction in timestamp '" + std::string(text) + "'");
  }
  std::int64_t offset_s = 0;
  if (pos < text.size() && text[pos] == 'Z') {
    ++pos;
  } else if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
    const int sign = text[pos] == '-' ? -1 : 1;
    ++pos;
    const int oh = take_int(text, pos, 2);
    expect(text, pos, ':');
    const int om = take_int(text, pos, 2);
    offset_s = sign * (oh * 3600 + om * 60);
  } else {
    throw Error(Errc::BadValue, "missing zone designator in timestamp '" + std::string(text) + "'");
  }
  if (pos != text.size()) throw Error(Errc::BadValue, "trailing characters in timestamp '" + std::string(text) + "'");

  const chr::year_month_day ymd{chr::year(y), chr::month(static_cast<unsigned>(mo)),
                                chr::day(static_cast<unsigned>(d))};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60)
    throw Error(Errc::BadValue, "out-of-range field in timestamp '" + std::string(text) + "'");
  const auto days = chr::sys_days(ymd).time_since_epoch();
  const std::int64_t secs = chr::duration_cast<chr::seconds>(days).count() + h * 3600 + mi * 60 + s - offset_s;
  return secs * kNsPerSecond + frac_ns;
}

}  // namespace twinforge
