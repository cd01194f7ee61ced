#ifndef DECOUPLE4D_ERROR_HPP
#define DECOUPLE4D_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace decouple4d {

enum class ErrorCode {
  InvalidConfig,
  InvalidNoiseProfile,
  NonPositiveTargetDepth,
  DimensionMismatch,
  ResolutionMismatch,
  EmptyFrame,
  NoNeighbors,
  DegenerateConfiguration,
  ZeroWeightMass,
  UndefinedDepthInRegion,
  NonPositiveEpsilon,
  EmptyCloud,
  LengthMismatch,
  InvalidDelta,
  Io,
  Format,
  Stage,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidNoiseProfile: return "InvalidNoiseProfile";
    case ErrorCode::NonPositiveTargetDepth: return "NonPositiveTargetDepth";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ResolutionMismatch: return "ResolutionMismatch";
    case ErrorCode::EmptyFrame: return "EmptyFrame";
    case ErrorCode::NoNeighbors: return "NoNeighbors";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::ZeroWeightMass: return "ZeroWeightMass";
    case ErrorCode::UndefinedDepthInRegion: return "UndefinedDepthInRegion";
    case ErrorCode::NonPositiveEpsilon: return "NonPositiveEpsilon";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InvalidDelta: return "InvalidDelta";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Format: return "Format";
    case ErrorCode::Stage: return "Stage";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Pipeline failure tagged with the stage name and, when known, the frame.
class StageError : public Error {
 public:
  StageError(std::string stage, int frame_id, ErrorCode cause, const std::string& message)
      : Error(ErrorCode::Stage, "stage '" + stage + "' frame " + std::to_string(frame_id) + " (" +
                                    std::string(to_string(cause)) + "): " + message),
        stage_(std::move(stage)),
        frame_id_(frame_id),
        cause_(cause) {}

  const std::string& stage() const noexcept { return stage_; }
  int frame_id() const noexcept { return frame_id_; }
  ErrorCode cause() const noexcept { return cause_; }

 private:
  std::string stage_;
  int frame_id_;
  ErrorCode cause_;
};

}  // namespace decouple4d

#endif  // DECOUPLE4D_ERROR_HPP
