#pragma once

#include <stdexcept>
#include <string>

namespace rtt {

enum class ErrorCode {
  kPrecondition,
  kInvalidConstraint,
  kUnsupportedConstraint,
  kAnnotationInconsistency,
  kRange,
  kEmptyMask,
  kDivergence,
  kCannotCorrupt,
  kDimension,
  kVocab,
  kOverflow,
  kUnsatisfiableSpec,
  kConfig,
  kIncomparableRuns,
  kIo,
  kParse,
};

const char* to_string(ErrorCode code) noexcept;

/// Base exception for every failure raised by the library. The code lets
/// callers branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rtt
