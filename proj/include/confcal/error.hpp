#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace confcal {

// Stable error vocabulary. Names are part of the external surface (CLI JSON
// diagnostics and bindings map onto them one-to-one), so never renumber.
enum class ErrorCode {
  EmptyCalibrationSet,
  InvalidRisk,
  DimensionMismatch,
  InvalidTau,
  NoMatches,
  InfiniteThreshold,
  InvalidNucleus,
  EmptySequence,
  InvalidBins,
  InvariantViolation,
  BadMagic,
  TruncatedPayload,
  IoFailure,
  AdapterFailure,
  SelectionParseError,
  TraceMissing,
  EmptyRegion,
  NoViablePathway,
  InvalidConfig,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::EmptyCalibrationSet: return "EmptyCalibrationSet";
    case ErrorCode::InvalidRisk: return "InvalidRisk";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidTau: return "InvalidTau";
    case ErrorCode::NoMatches: return "NoMatches";
    case ErrorCode::InfiniteThreshold: return "InfiniteThreshold";
    case ErrorCode::InvalidNucleus: return "InvalidNucleus";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::InvalidBins: return "InvalidBins";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::AdapterFailure: return "AdapterFailure";
    case ErrorCode::SelectionParseError: return "SelectionParseError";
    case ErrorCode::TraceMissing: return "TraceMissing";
    case ErrorCode::EmptyRegion: return "EmptyRegion";
    case ErrorCode::NoViablePathway: return "NoViablePathway";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace confcal
