#pragma once

#include <map>
#include <string>
#include <vector>

#include "twinforge/core/twin.hpp"

namespace twinforge {

// Header names shared across services.
namespace header {
inline constexpr const char* kOriginator = "ditto-originator";
inline constexpr const char* kDeviceId = "device-id";
inline constexpr const char* kTimestamp = "x-ts";  // event time, decimal ns
inline constexpr const char* kCorrelation = "correlation-id";
}  // namespace header

// Ditto-Protocol-style command or event.
struct Envelope {
  std::string topic;
  std::string path;
  Json value;
  std::map<std::string, std::string> headers;

  bool operator==(const Envelope&) const = default;
};

enum class Channel { Commands, Events };
enum class Action { Create, Modify, Delete };

struct TopicParts {
  ThingId thing_id;
  Channel channel;
  Action action;
};

std::string_view to_string(Action a) noexcept;

// "<ns>/<name>/things/twin/<channel>/<action>"
std::string make_topic(const ThingId& id, Channel channel, Action action);
TopicParts parse_topic(std::string_view topic);

// Splits "/a/b" into {"a","b"}; "/" yields {}. Throws Error(BadPath).
std::vector<std::string> split_path(std::string_view path);

// Throws Error(BadTopic | BadPath | BadValue) naming the failing field.
void validate_envelope(const Envelope& e);
bool is_valid_envelope(const Envelope& e) noexcept;

// Applies a validated modify envelope to a twin. Objects are merged
// recursively, arrays and scalars replaced. Throws
// Error(ManagedAttributeViolation) when a managed attribute would be
// written, Error(PathNotApplicable) when the path runs through a non-object.
TwinRecord apply_envelope(const TwinRecord& t, const Envelope& e);

// Recursive object merge; arrays and scalars in `patch` replace.
void merge_into(Json& target, const Json& patch);

Json to_json(const Envelope& e);
Envelope envelope_from_json(const Json& j);

}  // namespace twinforge
