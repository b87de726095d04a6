#include "monalab/errors.hpp"

namespace monalab {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyReduction: return "EmptyReduction";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::CheckpointMismatch: return "CheckpointMismatch";
    case ErrorCode::AlreadyAttached: return "AlreadyAttached";
    case ErrorCode::MissingGradient: return "MissingGradient";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::WriteFailed: return "WriteFailed";
    case ErrorCode::ReadFailed: return "ReadFailed";
  }
  return "Unknown";
}

}  // namespace monalab
