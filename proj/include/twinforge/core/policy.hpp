#pragma once

#include <map>
#include <string>

#include "twinforge/core/twin.hpp"

namespace twinforge {

struct Permission {
  bool read = false;
  bool write = false;
  bool operator==(const Permission&) const = default;
};

struct Policy {
  std::string policy_id;
  // subject -> permission; a key "prefix:*" covers every subject starting
  // with "prefix:".
  std::map<std::string, Permission> entries;

  bool can_read(const std::string& subject) const;
  bool can_write(const std::string& subject) const;
  bool operator==(const Policy&) const = default;
};

// Throws Error(InvalidArgument) when no subject may write.
void validate_policy(const Policy& p);

Json to_json(const Policy& p);
Policy policy_from_json(const Json& j);

}  // namespace twinforge
