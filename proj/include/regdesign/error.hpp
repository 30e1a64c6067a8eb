#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace regdesign {

/// Failure categories raised by the library. The CLI maps them to exit codes.
enum class ErrorCode {
  ZeroSensitivity,
  NonPSDCovariance,
  DimensionMismatch,
  EmptyFeasibilitySet,
  NonpositiveBudget,
  InvalidArgument,
  EnumerationTooLarge,
  NoActiveArm,
  Infeasible,
  AllInfeasible,
  NonConvergence,
  SingularNormalMatrix,
  VertexEnumerationTooLarge,
  EmptyCandidateSet,
  DegenerateAssignment,
  GridTooLarge,
  SingularDenominator,
  ConfigError,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroSensitivity: return "ZeroSensitivity";
    case ErrorCode::NonPSDCovariance: return "NonPSDCovariance";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyFeasibilitySet: return "EmptyFeasibilitySet";
    case ErrorCode::NonpositiveBudget: return "NonpositiveBudget";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EnumerationTooLarge: return "EnumerationTooLarge";
    case ErrorCode::NoActiveArm: return "NoActiveArm";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::AllInfeasible: return "AllInfeasible";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::SingularNormalMatrix: return "SingularNormalMatrix";
    case ErrorCode::VertexEnumerationTooLarge: return "VertexEnumerationTooLarge";
    case ErrorCode::EmptyCandidateSet: return "EmptyCandidateSet";
    case ErrorCode::DegenerateAssignment: return "DegenerateAssignment";
    case ErrorCode::GridTooLarge: return "GridTooLarge";
    case ErrorCode::SingularDenominator: return "SingularDenominator";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
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

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace regdesign
