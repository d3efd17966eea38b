#pragma once

#include <stdexcept>
#include <string>

namespace molspin {

// Violated precondition or type invariant on user-supplied input.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical failure inside an algorithm (singular system, non-convergence, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace molspin
