#pragma once

#include <stdexcept>
#include <string>

namespace cpdefer {

// Bad input: malformed files, out-of-range arguments, violated preconditions.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The data is well-formed but an experiment cannot proceed, e.g. a deferral
// is required for a sample nobody annotated.
class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cpdefer
