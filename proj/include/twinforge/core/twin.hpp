#pragma once

#include <map>
#include <string>
#include <string_view>

#include "json.hpp"

#include "twinforge/core/thing_id.hpp"

namespace twinforge {

using Json = nlohmann::json;

// Attribute keys owned by the registry. Generic attribute writes may not
// touch them.
namespace managed {
inline constexpr std::string_view kIsType = "isType";
inline constexpr std::string_view kType = "type";
inline constexpr std::string_view kParent = "parent";
inline constexpr std::string_view kChildren = "children";

bool is_managed_key(std::string_view key) noexcept;
}  // namespace managed

struct FeatureState {
  // Values are null, number, string or boolean.
  std::map<std::string, Json> properties;

  bool operator==(const FeatureState&) const = default;
};

struct TwinRecord {
  ThingId thing_id;
  std::string policy_id;
  Json attributes = Json::object();
  std::map<std::string, FeatureState> features;

  bool operator==(const TwinRecord&) const = default;
};

bool is_scalar_or_null(const Json& v) noexcept;

Json features_to_json(const std::map<std::string, FeatureState>& features);
// Throws Error(BadValue) when a feature lacks a `properties` object or a
// property is not a scalar.
std::map<std::string, FeatureState> features_from_json(const Json& j);

Json to_json(const TwinRecord& t);
TwinRecord twin_from_json(const Json& j);

}  // namespace twinforge
