#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace brainage {

enum class ErrorCode {
  // imaging
  BadMagic,
  BadHeader,
  UnsupportedDatatype,
  TruncatedPayload,
  NonFiniteVoxel,
  InvalidVolume,
  // dataset
  ZeroDivisor,
  MissingField,
  DuplicateId,
  BadSexCode,
  EmptyManifest,
  InvalidRecord,
  // splitter
  DegenerateAges,
  MismatchedBins,
  // autograd / vgg8
  ShapeMismatch,
  BadEdge,
  EmptySplit,
  BadCheckpoint,
  // stats
  RankDeficient,
  TooFewRows,
  NotNested,
  ZeroVariance,
  DomainError,
  // cli
  MissingStageInput,
  StaleStageInput,
  ConfigInvalid,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Every failure in the library is reported as an Error carrying a code the
/// caller can branch on; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace brainage
