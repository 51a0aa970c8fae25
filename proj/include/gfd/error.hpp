#pragma once

#include <stdexcept>
#include <string>

namespace gfd {

// Bad input: shapes, ranges, malformed files. The CLI maps this to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced NaN/Inf or otherwise failed at run time (exit code 2).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gfd
