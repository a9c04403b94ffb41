#pragma once

#include <stdexcept>
#include <string>

namespace ffis {

// Bad inputs: malformed configs, shape mismatches, out-of-range parameters.
// The CLI maps this family to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Absolute-continuity failure: the behavior policy puts zero mass on an
// outcome the target policy can produce. Mapped to exit code 3.
class SupportViolation : public std::runtime_error {
 public:
  explicit SupportViolation(const std::string& what) : std::runtime_error(what) {}
};

// Refusal of a combinatorial computation whose cost exceeds a configured
// budget. A guard, not a numeric failure; treated as a validation error by
// the CLI.
class BudgetExceeded : public ValidationError {
 public:
  explicit BudgetExceeded(const std::string& what) : ValidationError(what) {}
};

}  // namespace ffis
