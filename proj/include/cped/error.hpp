#pragma once

#include <stdexcept>
#include <string>

namespace cped {

// Bad user input: shapes, config values, file contents. CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf produced or consumed by a numeric routine. CLI exit code 2.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Any other failure while running (I/O, divergence, assertion dumps). Exit 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cped
