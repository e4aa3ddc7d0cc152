#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pagkit {

enum class ErrorCode {
  // input parsing / I/O
  BadMagic,
  BadHeader,
  UnsupportedDatatype,
  TruncatedFile,
  IoError,
  ParseError,
  // imaging
  ConstantVolume,
  EmptyMask,
  DimensionMismatch,
  // cohort
  MissingGleason,
  DuplicateIds,
  TooFewPatients,
  // regressor
  ShapeMismatch,
  EmptyBatch,
  PatientLeakage,
  DivergedLoss,
  NoSlices,
  // pag
  EmptySliceList,
  // stats
  MissingCovariate,
  QuasiSeparation,
  Singular,
  OneClassOutcome,
  NotConverged,
  TooFewSamples,
  ColumnMismatch,
  // configuration
  InvalidConfig,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Broad failure class, used by the CLI to pick an exit code.
enum class ErrorCategory { Config, Data, Statistical };

ErrorCategory category_of(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return to_string(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& detail);

}  // namespace pagkit
