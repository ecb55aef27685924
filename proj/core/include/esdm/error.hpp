#pragma once

#include <stdexcept>
#include <string>

namespace esdm {

// Malformed or inconsistent input: bad files, violated preconditions.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-PD matrices, non-convergence, non-finite evaluations.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace esdm
