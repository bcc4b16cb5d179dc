#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace atlascrf {

enum class ErrorCode {
  InvalidArgument,
  ShapeMismatch,
  NonFinite,
  OutOfRange,
  BadMagic,
  BadHeader,
  DimOverflow,
  Truncated,
  Io,
  Integrity,
  Numeric,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Library-wide exception. The code is stable and machine readable; the
/// message carries the human-oriented detail (offending voxel, path, ...).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace atlascrf
