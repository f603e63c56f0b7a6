#pragma once

#include <stdexcept>
#include <string>

namespace unfold {

// Error taxonomy mirrored by the CLI exit codes.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct InputError : std::invalid_argument {
  explicit InputError(const std::string& m) : std::invalid_argument(m) {}
};
struct StateError : std::runtime_error {
  explicit StateError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace unfold
