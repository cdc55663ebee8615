#pragma once

#include <stdexcept>
#include <string>

namespace tnp {

// Bad configuration or arguments. The CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values, failed factorizations, corrupt checkpoints. Exit code 2.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape mismatch between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace tnp
