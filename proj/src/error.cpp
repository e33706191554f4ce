#include "proker/error.hpp"

namespace proker {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kCorruptLabel: return "CorruptLabel";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kBadMetadata: return "BadMetadata";
    case ErrorCode::kNotNormalized: return "NotNormalized";
    case ErrorCode::kZeroNormRow: return "ZeroNormRow";
    case ErrorCode::kInsufficientSamples: return "InsufficientSamples";
    case ErrorCode::kInvalidKernel: return "InvalidKernel";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kSingularCovariance: return "SingularCovariance";
    case ErrorCode::kSingularSystem: return "SingularSystem";
    case ErrorCode::kSolveFailed: return "SolveFailed";
    case ErrorCode::kBetaMismatch: return "BetaMismatch";
    case ErrorCode::kUnsupportedKernel: return "UnsupportedKernel";
    case ErrorCode::kEmptyGrid: return "EmptyGrid";
    case ErrorCode::kMissingAnchor: return "MissingAnchor";
    case ErrorCode::kMissingValidation: return "MissingValidation";
  }
  return "Unknown";
}

bool is_numerical(ErrorCode code) {
  return code == ErrorCode::kSingularCovariance || code == ErrorCode::kSingularSystem ||
         code == ErrorCode::kSolveFailed;
}

}  // namespace proker
