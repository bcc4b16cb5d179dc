#include "atlascrf/error.hpp"

namespace atlascrf {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::BadHeader: return "BadHeader";
    case ErrorCode::DimOverflow: return "DimOverflow";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Integrity: return "Integrity";
    case ErrorCode::Numeric: return "Numeric";
  }
  return "Unknown";
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace atlascrf
