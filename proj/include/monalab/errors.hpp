#pragma once

#include <stdexcept>
#include <string>

namespace monalab {

enum class ErrorCode {
  InvalidShape,
  ShapeMismatch,
  EmptyReduction,
  NonScalarLoss,
  InvalidArgument,
  InvalidConfig,
  InvalidLabel,
  InvalidSpec,
  CheckpointMismatch,
  AlreadyAttached,
  MissingGradient,
  EmptySplit,
  WriteFailed,
  ReadFailed,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; the code drives C API status mapping.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace monalab
