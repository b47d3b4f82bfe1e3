#include "denma/error.hpp"

namespace denma {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonNumericDose: return "NonNumericDose";
    case ErrorCode::NonNumericValue: return "NonNumericValue";
    case ErrorCode::EventsExceedN: return "EventsExceedN";
    case ErrorCode::DuplicateArm: return "DuplicateArm";
    case ErrorCode::InvalidArm: return "InvalidArm";
    case ErrorCode::ParseFailure: return "ParseFailure";
    case ErrorCode::MissingEquivalence: return "MissingEquivalence";
    case ErrorCode::MissingCovariate: return "MissingCovariate";
    case ErrorCode::TooFewDistinctDoses: return "TooFewDistinctDoses";
    case ErrorCode::MissingKnots: return "MissingKnots";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::SpecDatasetMismatch: return "SpecDatasetMismatch";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::DisconnectedNetwork: return "DisconnectedNetwork";
    case ErrorCode::TooFewPlaceboArms: return "TooFewPlaceboArms";
    case ErrorCode::UnknownAgent: return "UnknownAgent";
    case ErrorCode::Extrapolation: return "Extrapolation";
    case ErrorCode::ModelDatasetMismatch: return "ModelDatasetMismatch";
    case ErrorCode::LayoutMismatch: return "LayoutMismatch";
    case ErrorCode::InitializationFailure: return "InitializationFailure";
    case ErrorCode::TooFewDraws: return "TooFewDraws";
    case ErrorCode::MissingRunDir: return "MissingRunDir";
    case ErrorCode::StaleManifest: return "StaleManifest";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

ErrorCategory category(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingColumn:
    case ErrorCode::NonNumericDose:
    case ErrorCode::NonNumericValue:
    case ErrorCode::EventsExceedN:
    case ErrorCode::DuplicateArm:
    case ErrorCode::InvalidArm:
    case ErrorCode::ParseFailure:
    case ErrorCode::Io:
      return ErrorCategory::Parse;
    case ErrorCode::InitializationFailure:
    case ErrorCode::TooFewDraws:
      return ErrorCategory::Sampling;
    case ErrorCode::MissingRunDir:
    case ErrorCode::StaleManifest:
      return ErrorCategory::RunDir;
    default:
      return ErrorCategory::Validation;
  }
}

}  // namespace denma
