#pragma once

#include <stdexcept>
#include <string>

namespace meva {

// Exit codes used by the CLI. Library code throws, the CLI maps.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfigError = 1,
  kExitNumericError = 2,
  kExitMissingCheckpoint = 3,
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values, failed solves, diverged training.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingCheckpoint : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace meva
