#include "aquadrift/error.hpp"

namespace aquadrift {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidNetwork: return "InvalidNetwork";
    case ErrorCode::Disconnected: return "Disconnected";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::UnknownPipe: return "UnknownPipe";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::InvalidScenario: return "InvalidScenario";
    case ErrorCode::SeriesTooShort: return "SeriesTooShort";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::BufferNotFull: return "BufferNotFull";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::NaNLoss: return "NaNLoss";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

namespace {

std::string compose(ErrorCode code, const std::string& what,
                    std::optional<std::int64_t> step) {
  std::string out(to_string(code));
  out += ": ";
  out += what;
  if (step) {
    out += " (step " + std::to_string(*step) + ")";
  }
  return out;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& what,
             std::optional<std::int64_t> step)
    : std::runtime_error(compose(code, what, step)),
      code_(code),
      step_(step),
      message_(what) {}

Error Error::at_step(std::int64_t step) const {
  return Error(code_, message_, step);
}

}  // namespace aquadrift
