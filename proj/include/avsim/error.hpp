#pragma once

#include <stdexcept>
#include <string>

namespace avsim {

// Raised when a caller breaks a documented precondition (wrong dimensions,
// unknown device, ...). Callers are expected to fix their input.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// User-facing refusal (bad flag values, incompatible dataset, ...).
class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace avsim
