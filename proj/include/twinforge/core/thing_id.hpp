#pragma once

#include <compare>
#include <functional>
#include <string>
#include <string_view>

namespace twinforge {

// Identity of a thing (twin or type), rendered as "namespace:name".
struct ThingId {
  std::string ns;
  std::string name;

  std::string str() const { return ns + ":" + name; }

  auto operator<=>(const ThingId&) const = default;
  bool operator==(const ThingId&) const = default;
};

// Throws Error(MalformedId) unless `text` has exactly one colon separating
// two non-empty parts free of whitespace.
ThingId parse_thing_id(std::string_view text);

bool is_valid_id_part(std::string_view part) noexcept;

}  // namespace twinforge

template <>
struct std::hash<twinforge::ThingId> {
  std::size_t operator()(const twinforge::ThingId& id) const noexcept {
    return std::hash<std::string>{}(id.ns) * 31 ^ std::hash<std::string>{}(id.name);
  }
};
