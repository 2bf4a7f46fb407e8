#pragma once

#include <stdexcept>
#include <string>

namespace curvlab {

/// Bad input: violated precondition, malformed config, out-of-range
/// hyperparameter. The CLI maps this to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// A computation produced a non-finite value or failed to meet a numerical
/// postcondition. The CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace curvlab
