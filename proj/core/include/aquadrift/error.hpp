#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace aquadrift {

enum class ErrorCode {
  InvalidNetwork,
  Disconnected,
  NonConvergence,
  UnknownPipe,
  UnknownNode,
  InvalidScenario,
  SeriesTooShort,
  EmptySample,
  BufferNotFull,
  EmptyTrainingSet,
  NaNLoss,
  InvalidConfig,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every failure raised by the library. `step()` is set when the failure
// happened while processing a particular stream step.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what,
        std::optional<std::int64_t> step = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::int64_t> step() const noexcept { return step_; }

  // Same error with step context attached.
  Error at_step(std::int64_t step) const;

 private:
  ErrorCode code_;
  std::optional<std::int64_t> step_;
  std::string message_;
};

}  // namespace aquadrift
