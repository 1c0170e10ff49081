#pragma once

#include <stdexcept>
#include <string>

namespace favor {

enum class ErrorCode {
  NonPositiveDepth,
  BorderViolation,
  ZeroVector,
  ChannelMismatch,
  DegenerateGeometry,
  NonConvergence,
  NegativeDepth,
  OutOfBounds,
  NoIntersection,
  OutOfFrustum,
  Divergence,
  DegenerateConfiguration,
  InsufficientCorrespondences,
  NoModelFound,
  LocalizationFailed,
  IoFailure,
  BadMagic,
  VersionMismatch,
  CorruptPayload,
  InvalidArgument,
};

const char* to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace favor
