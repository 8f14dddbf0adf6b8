#include "rtt/error.hpp"

namespace rtt {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kPrecondition: return "precondition violation";
    case ErrorCode::kInvalidConstraint: return "invalid constraint";
    case ErrorCode::kUnsupportedConstraint: return "unsupported constraint";
    case ErrorCode::kAnnotationInconsistency: return "annotation inconsistency";
    case ErrorCode::kRange: return "range error";
    case ErrorCode::kEmptyMask: return "empty mask";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kCannotCorrupt: return "cannot corrupt";
    case ErrorCode::kDimension: return "dimension mismatch";
    case ErrorCode::kVocab: return "vocabulary error";
    case ErrorCode::kOverflow: return "overflow";
    case ErrorCode::kUnsatisfiableSpec: return "unsatisfiable spec";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kIncomparableRuns: return "incomparable runs";
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kParse: return "parse error";
  }
  return "unknown error";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace rtt
