#include "favor/error.hpp"

namespace favor {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::BorderViolation: return "BorderViolation";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::NegativeDepth: return "NegativeDepth";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::NoIntersection: return "NoIntersection";
    case ErrorCode::OutOfFrustum: return "OutOfFrustum";
    case ErrorCode::Divergence: return "Divergence";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::InsufficientCorrespondences: return "InsufficientCorrespondences";
    case ErrorCode::NoModelFound: return "NoModelFound";
    case ErrorCode::LocalizationFailed: return "LocalizationFailed";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptPayload: return "CorruptPayload";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

}  // namespace favor
