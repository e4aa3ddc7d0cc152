#include "pagkit/error.hpp"

namespace pagkit {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::BadHeader: return "BadHeader";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ConstantVolume: return "ConstantVolume";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::MissingGleason: return "MissingGleason";
    case ErrorCode::DuplicateIds: return "DuplicateIds";
    case ErrorCode::TooFewPatients: return "TooFewPatients";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::PatientLeakage: return "PatientLeakage";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::NoSlices: return "NoSlices";
    case ErrorCode::EmptySliceList: return "EmptySliceList";
    case ErrorCode::MissingCovariate: return "MissingCovariate";
    case ErrorCode::QuasiSeparation: return "QuasiSeparation";
    case ErrorCode::Singular: return "Singular";
    case ErrorCode::OneClassOutcome: return "OneClassOutcome";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::ColumnMismatch: return "ColumnMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidArgument:
      return ErrorCategory::Config;
    case ErrorCode::QuasiSeparation:
    case ErrorCode::Singular:
    case ErrorCode::OneClassOutcome:
    case ErrorCode::NotConverged:
    case ErrorCode::TooFewSamples:
    case ErrorCode::DivergedLoss:
      return ErrorCategory::Statistical;
    default:
      return ErrorCategory::Data;
  }
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

void fail(ErrorCode code, const std::string& detail) { throw Error(code, detail); }

}  // namespace pagkit
