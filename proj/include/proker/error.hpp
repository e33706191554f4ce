#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace proker {

enum class ErrorCode {
  kIoError,
  kBadMagic,
  kDimMismatch,
  kCorruptLabel,
  kNonFinite,
  kBadMetadata,
  kNotNormalized,
  kZeroNormRow,
  kInsufficientSamples,
  kInvalidKernel,
  kInvalidConfig,
  kSingularCovariance,
  kSingularSystem,
  kSolveFailed,
  kBetaMismatch,
  kUnsupportedKernel,
  kEmptyGrid,
  kMissingAnchor,
  kMissingValidation,
};

/// Stable CamelCase name used in diagnostics, e.g. "BadMagic".
std::string_view error_name(ErrorCode code);

/// True for errors raised by a numerical factorization or solve.
bool is_numerical(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace proker
