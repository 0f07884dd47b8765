#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "twinforge/core/clock.hpp"
#include "twinforge/core/envelope.hpp"

namespace twinforge {

// Binary encodings for model inputs. All are little-endian; floats are
// IEEE-754, integers two's complement.
enum class Format { Float64, Float32, Int64, Int32 };

std::string_view to_string(Format f) noexcept;
// Throws Error(InvalidSchema) for names outside the closed set.
Format parse_format(std::string_view name);
std::size_t format_size(Format f) noexcept;
std::size_t encoded_size(const std::vector<Format>& schema) noexcept;

// One entry of a required_values plan. A leading '$' marks a time field
// resolved from the clock ($year, $month, $day, $hour, $minute, $second);
// other entries carry the last value seen for that name.
struct ValueSpec {
  Format format = Format::Float64;
  std::string name;
  Json last_value = nullptr;

  bool is_time() const noexcept { return !name.empty() && name.front() == '$'; }
  bool operator==(const ValueSpec&) const = default;
};

Json to_json(const ValueSpec& s);
// Throws Error(InvalidSchema) on unknown formats or a last_value on a time
// field.
ValueSpec value_spec_from_json(const Json& j);
Json specs_to_json(const std::vector<ValueSpec>& specs);
std::vector<ValueSpec> specs_from_json(const Json& j);

std::vector<Format> schema_of(const std::vector<ValueSpec>& specs);

// Throws Error(BadValue) when a value does not fit its format: integer
// formats need integral values in range.
std::string encode_values(const std::vector<Format>& schema, const std::vector<double>& values);
// Throws Error(DecodeError) when the length does not match the schema.
std::vector<double> decode_values(const std::vector<Format>& schema, std::string_view bytes);

// Calendar component named by a time field ("$year"), in UTC. Throws
// Error(UnknownTimeField).
double time_field(std::string_view name, TimestampNs now);

// Resolves every spec and encodes them in order. Throws
// Error(UnknownTimeField), Error(MissingLastValue) or Error(BadValue).
std::string build_input(const std::vector<ValueSpec>& specs, TimestampNs now);

// Scalar leaves written by a telemetry envelope, addressable by name:
// "f.p" for feature f property p, "f" for f's "value" property, and "p"
// when only one feature has a property p.
std::map<std::string, Json> message_fields(const Envelope& e);

// Stores matching numeric fields into the non-time specs' last_value.
// Returns how many were set.
std::size_t absorb_fields(std::vector<ValueSpec>& specs, const std::map<std::string, Json>& fields);

}  // namespace twinforge
