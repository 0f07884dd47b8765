#include "twinforge/core/error.hpp"

namespace twinforge {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::MalformedId: return "MalformedId";
    case Errc::BadTopic: return "BadTopic";
    case Errc::BadPath: return "BadPath";
    case Errc::BadValue: return "BadValue";
    case Errc::PathNotApplicable: return "PathNotApplicable";
    case Errc::ManagedAttributeViolation: return "ManagedAttributeViolation";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::UnknownPolicy: return "UnknownPolicy";
    case Errc::NotFound: return "NotFound";
    case Errc::KindMismatch: return "KindMismatch";
    case Errc::TwinAlreadyHasParent: return "TwinAlreadyHasParent";
    case Errc::CycleCreated: return "CycleCreated";
    case Errc::NotAType: return "NotAType";
    case Errc::CascadeOnType: return "CascadeOnType";
    case Errc::Forbidden: return "Forbidden";
    case Errc::DuplicateDevice: return "DuplicateDevice";
    case Errc::UnknownTenant: return "UnknownTenant";
    case Errc::AuthFailed: return "AuthFailed";
    case Errc::MappingFailed: return "MappingFailed";
    case Errc::Unavailable: return "Unavailable";
    case Errc::UnknownTimeField: return "UnknownTimeField";
    case Errc::MissingLastValue: return "MissingLastValue";
    case Errc::DuplicateModel: return "DuplicateModel";
    case Errc::InvalidSchema: return "InvalidSchema";
    case Errc::DecodeError: return "DecodeError";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::InvalidResult: return "InvalidResult";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Conflict: return "Conflict";
    case Errc::Corrupt: return "Corrupt";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace twinforge
