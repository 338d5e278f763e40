#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace spikeforge {

enum class Errc {
  TruncatedRecord,
  OutOfBounds,
  NonMonotonicTimestamp,
  TimestampOverflow,
  InvalidTarget,
  InvalidArgument,
  DegenerateBox,
  EmptyClass,
  ShapeMismatch,
  OddExtent,
  NonFiniteState,
  NonPositiveLambda,
  NoGroundTruth,
  DivergedLoss,
  EmptySplit,
  ZeroWeights,
  ConstraintViolation,
  DegenerateFit,
  FormatError,
  ChecksumMismatch,
  MissingArtifact,
  IoError,
};

inline const char* to_string(Errc code) {
  switch (code) {
    case Errc::TruncatedRecord: return "TruncatedRecord";
    case Errc::OutOfBounds: return "OutOfBounds";
    case Errc::NonMonotonicTimestamp: return "NonMonotonicTimestamp";
    case Errc::TimestampOverflow: return "TimestampOverflow";
    case Errc::InvalidTarget: return "InvalidTarget";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::DegenerateBox: return "DegenerateBox";
    case Errc::EmptyClass: return "EmptyClass";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::OddExtent: return "OddExtent";
    case Errc::NonFiniteState: return "NonFiniteState";
    case Errc::NonPositiveLambda: return "NonPositiveLambda";
    case Errc::NoGroundTruth: return "NoGroundTruth";
    case Errc::DivergedLoss: return "DivergedLoss";
    case Errc::EmptySplit: return "EmptySplit";
    case Errc::ZeroWeights: return "ZeroWeights";
    case Errc::ConstraintViolation: return "ConstraintViolation";
    case Errc::DegenerateFit: return "DegenerateFit";
    case Errc::FormatError: return "FormatError";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::MissingArtifact: return "MissingArtifact";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

/// Library-wide exception. Carries a machine-readable code and, for
/// decoding errors, the byte offset of the offending record.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, std::optional<std::size_t> offset = std::nullopt)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), offset_(offset) {}

  Errc code() const noexcept { return code_; }
  std::optional<std::size_t> offset() const noexcept { return offset_; }

 private:
  Errc code_;
  std::optional<std::size_t> offset_;
};

}  // namespace spikeforge
