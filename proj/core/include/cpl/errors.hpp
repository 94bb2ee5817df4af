#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cpl {

enum class ErrorCode {
  kInvalidModel,
  kSelectingEos,
  kAlreadySelected,
  kInvalidTemperature,
  kDuplicateIndex,
  kIndexOutOfRange,
  kShapeMismatch,
  kTargetSelected,
  kCacheMismatch,
  kInvalidK,
  kInvalidConfig,
  kOffsetOutOfRange,
  kIoError,
  kDivergedLoss,
  kParseError,
};

std::string_view ToString(ErrorCode code);

// All recoverable failures in the library are reported through this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(ToString(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cpl
