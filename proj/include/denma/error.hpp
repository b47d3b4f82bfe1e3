#pragma once

#include <stdexcept>
#include <string>

namespace denma {

enum class ErrorCode {
  // input parsing
  MissingColumn,
  NonNumericDose,
  NonNumericValue,
  EventsExceedN,
  DuplicateArm,
  InvalidArm,
  ParseFailure,
  // validation of data against a model
  MissingEquivalence,
  MissingCovariate,
  TooFewDistinctDoses,
  MissingKnots,
  DimensionMismatch,
  SpecDatasetMismatch,
  InvalidSpec,
  DisconnectedNetwork,
  TooFewPlaceboArms,
  UnknownAgent,
  Extrapolation,
  ModelDatasetMismatch,
  LayoutMismatch,
  // sampling and post-processing
  InitializationFailure,
  TooFewDraws,
  // run directories
  MissingRunDir,
  StaleManifest,
  Io,
};

const char* to_string(ErrorCode code) noexcept;

enum class ErrorCategory { Parse, Validation, Sampling, RunDir };

ErrorCategory category(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace denma
