#include "twinforge/core/value_codec.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>

#include "twinforge/core/error.hpp"

namespace twinforge {

namespace {

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

template <typename I>
I checked_int(double v) {
  if (!std::isfinite(v) || std::trunc(v) != v || v < static_cast<double>(std::numeric_limits<I>::min()) ||
      v >= -static_cast<double>(std::numeric_limits<I>::min()))
    throw Error(Errc::BadValue, "value " + std::to_string(v) + " does not fit an integer format");
  return static_cast<I>(v);
}

}  // namespace

std::string_view to_string(Format f) noexcept {
  switch (f) {
    case Format::Float64: return "float64";
    case Format::Float32: return "float32";
    case Format::Int64: return "int64";
    case Format::Int32: return "int32";
  }
  return "?";
}

Format parse_format(std::string_view name) {
  for (auto f : {Format::Float64, Format::Float32, Format::Int64, Format::Int32})
    if (to_string(f) == name) return f;
  throw Error(Errc::InvalidSchema, "unknown format '" + std::string(name) + "'");
}

std::size_t format_size(Format f) noexcept {
  return f == Format::Float64 || f == Format::Int64 ? 8 : 4;
}

std::size_t encoded_size(const std::vector<Format>& schema) noexcept {
  std::size_t n = 0;
  for (auto f : schema) n += format_size(f);
  return n;
}

Json to_json(const ValueSpec& s) {
  Json j{{"format", to_string(s.format)}, {"name", s.name}};
  if (!s.is_time()) j["last_value"] = s.last_value;
  return j;
}

ValueSpec value_spec_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("name") || !j["name"].is_string() || !j.contains("format") ||
      !j["format"].is_string())
    throw Error(Errc::InvalidSchema, "value spec needs string 'format' and 'name'");
  ValueSpec s;
  s.format = parse_format(j["format"].get<std::string>());
  s.name = j["name"].get<std::string>();
  if (s.name.empty()) throw Error(Errc::InvalidSchema, "empty value name");
  if (auto it = j.find("last_value"); it != j.end()) {
    if (s.is_time() && !it->is_null()) throw Error(Errc::InvalidSchema, "time field " + s.name + " has a last_value");
    if (!it->is_null() && !it->is_number()) throw Error(Errc::InvalidSchema, "last_value of " + s.name + " is not a number");
    s.last_value = *it;
  }
  return s;
}

Json specs_to_json(const std::vector<ValueSpec>& specs) {
  Json a = Json::array();
  for (const auto& s : specs) a.push_back(to_json(s));
  return a;
}

std::vector<ValueSpec> specs_from_json(const Json& j) {
  if (!j.is_array()) throw Error(Errc::InvalidSchema, "required_values must be an array");
  std::vector<ValueSpec> out;
  for (const auto& e : j) out.push_back(value_spec_from_json(e));
  return out;
}

std::vector<Format> schema_of(const std::vector<ValueSpec>& specs) {
  std::vector<Format> out;
  out.reserve(specs.size());
  for (const auto& s : specs) out.push_back(s.format);
  return out;
}

std::string encode_values(const std::vector<Format>& schema, const std::vector<double>& values) {
  if (schema.size() != values.size())
    throw Error(Errc::BadValue, "expected " + std::to_string(schema.size()) + " values, got " +
                                    std::to_string(values.size()));
  std::string out;
  out.reserve(encoded_size(schema));
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const double v = values[i];
    switch (schema[i]) {
      case Format::Float64: put_le(out, std::bit_cast<std::uint64_t>(v)); break;
      case Format::Float32: put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); break;
      case Format::Int64: put_le(out, static_cast<std::uint64_t>(checked_int<std::int64_t>(v))); break;
      case Format::Int32: put_le(out, static_cast<std::uint32_t>(checked_int<std::int32_t>(v))); break;
    }
  }
  return out;
}

std::vector<double> decode_values(const std::vector<Format>& schema, std::string_view bytes) {
  if (bytes.size() != encoded_size(schema))
    throw Error(Errc::DecodeError, "expected " + std::to_string(encoded_size(schema)) + " bytes, got " +
                                       std::to_string(bytes.size()));
  std::vector<double> out;
  out.reserve(schema.size());
  const char* p = bytes.data();
  for (auto f : schema) {
    switch (f) {
      case Format::Float64: out.push_back(std::bit_cast<double>(get_le<std::uint64_t>(p))); break;
      case Format::Float32: out.push_back(std::bit_cast<float>(get_le<std::uint32_t>(p))); break;
      case Format::Int64: out.push_back(static_cast<double>(static_cast<std::int64_t>(get_le<std::uint64_t>(p)))); break;
      case Format::Int32: out.push_back(static_cast<std::int32_t>(get_le<std::uint32_t>(p))); break;
    }
    p += format_size(f);
  }
  return out;
}

double time_field(std::string_view name, TimestampNs now) {
  using namespace std::chrono;
  const sys_time<nanoseconds> tp{nanoseconds(now)};
  const auto day = floor<days>(tp);
  const year_month_day ymd{day};
  const hh_mm_ss hms{floor<seconds>(tp - day)};
  if (name == "$year") return static_cast<int>(ymd.year());
  if (name == "$month") return static_cast<unsigned>(ymd.month());
  if (name == "$day") return static_cast<unsigned>(ymd.day());
  if (name == "$hour") return static_cast<double>(hms.hours().count());
  if (name == "$minute") return static_cast<double>(hms.minutes().count());
  if (name == "$second") return static_cast<double>(hms.seconds().count());
  throw Error(Errc::UnknownTimeField, "unsupported time field '" + std::string(name) + "'");
}

std::string build_input(const std::vector<ValueSpec>& specs, TimestampNs now) {
  std::vector<double> values;
  values.reserve(specs.size());
  for (const auto& s : specs) {
    if (s.is_time()) {
      values.push_back(time_field(s.name, now));
    } else if (s.last_value.is_number()) {
      values.push_back(s.last_value.get<double>());
    } else {
      throw Error(Errc::MissingLastValue, "no value received yet for '" + s.name + "'");
    }
  }
  return encode_values(schema_of(specs), values);
}

std::map<std::string, Json> message_fields(const Envelope& e) {
  std::map<std::string, Json> leaves;  // "f.p" -> value
  const auto parts = split_path(e.path);
  auto add_feature = [&](const std::string& f, const Json& feature) {
    if (!feature.is_object()) return;
    auto props = feature.find("properties");
    if (props == feature.end() || !props->is_object()) return;
    for (const auto& [p, v] : props->items())
      if (is_scalar_or_null(v) && !v.is_null()) leaves[f + "." + p] = v;
  };
  auto add_features = [&](const Json& fs) {
    if (!fs.is_object()) return;
    for (const auto& [f, feature] : fs.items()) add_feature(f, feature);
  };
  if (parts.empty()) {
    if (e.value.is_object() && e.value.contains("features")) add_features(e.value["features"]);
  } else if (parts[0] == "features") {
    if (parts.size() == 1) {
      add_features(e.value);
    } else if (parts.size() == 2) {
      add_feature(parts[1], e.value);
    } else if (parts.size() == 3 && parts[2] == "properties") {
      add_feature(parts[1], Json{{"properties", e.value}});
    } else if (parts.size() == 4 && parts[2] == "properties" && is_scalar_or_null(e.value) && !e.value.is_null()) {
      leaves[parts[1] + "." + parts[3]] = e.value;
    }
  }

  std::map<std::string, Json> out = leaves;
  std::map<std::string, int> property_count;
  for (const auto& [key, v] : leaves) {
    const auto dot = key.find('.');
    const auto f = key.substr(0, dot), p = key.substr(dot + 1);
    if (p == "value") out.emplace(f, v);
    ++property_count[p];
  }
  for (const auto& [key, v] : leaves) {
    const auto p = key.substr(key.find('.') + 1);
    if (property_count[p] == 1) out.emplace(p, v);
  }
  return out;
}

std::size_t absorb_fields(std::vector<ValueSpec>& specs, const std::map<std::string, Json>& fields) {
  std::size_t n = 0;
  for (auto& s : specs) {
    if (s.is_time()) continue;
    auto it = fields.find(s.name);
    if (it == fields.end() || !it->second.is_number()) continue;
    s.last_value = it->second;
    ++n;
  }
  return n;
}

}  // namespace twinforge
