#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace twinforge {

enum class Errc {
  MalformedId,
  BadTopic,
  BadPath,
  BadValue,
  PathNotApplicable,
  ManagedAttributeViolation,
  DuplicateId,
  UnknownPolicy,
  NotFound,
  KindMismatch,
  TwinAlreadyHasParent,
  CycleCreated,
  NotAType,
  CascadeOnType,
  Forbidden,
  DuplicateDevice,
  UnknownTenant,
  AuthFailed,
  MappingFailed,
  Unavailable,
  UnknownTimeField,
  MissingLastValue,
  DuplicateModel,
  InvalidSchema,
  DecodeError,
  IndexOutOfRange,
  InvalidResult,
  InvalidArgument,
  Conflict,
  Corrupt,
  IoError,
};

std::string_view to_string(Errc code) noexcept;

// All recoverable failures in the platform are reported as Error; the code
// is what callers branch on, the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace twinforge
