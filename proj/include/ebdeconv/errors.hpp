#pragma once

#include <stdexcept>
#include <string>

namespace ebd {

// Bad user input: malformed files, out-of-domain parameters, size mismatches.
// The CLI maps this to exit code 2.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failure: non-finite values, failed factorizations, quadrature that
// cannot reach tolerance. The CLI maps this to exit code 3.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ebd
