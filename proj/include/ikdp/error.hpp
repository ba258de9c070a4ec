#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ikdp {

enum class ErrorCode {
  kShapeMismatch,
  kInvalidArgument,
  kOutOfRange,
  kNonFinite,
  kIo,
  // dataset CSV
  kMalformedHeader,
  kColumnCount,
  kFkInconsistent,
  // checkpoint container
  kBadMagic,
  kUnsupportedVersion,
  kTruncated,
  kCheckpointMismatch,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library. `code()` is what callers branch
/// on; `what()` is a one-line message of the form "<code>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kMalformedHeader: return "malformed_header";
    case ErrorCode::kColumnCount: return "column_count";
    case ErrorCode::kFkInconsistent: return "fk_inconsistent";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kUnsupportedVersion: return "unsupported_version";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kCheckpointMismatch: return "checkpoint_mismatch";
  }
  return "unknown";
}

}  // namespace ikdp
