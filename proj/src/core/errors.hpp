#pragma once

#include <stdexcept>
#include <string>

namespace flexmsm {

// Malformed model specification or inconsistent constraint map.
class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Panel data violating the dataset invariants, or data the model cannot
// explain (e.g. an observed transition with no path in the structure).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument values passed to a numerical routine (negative lambda,
// Weibull hazard at t <= 0, length mismatches).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical breakdown: singular information, non-real transition matrices,
// zero-probability likelihood terms. `details` carries a JSON document with
// context (offending matrix, scoring trace, null-space direction).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, std::string details = "{}")
      : std::runtime_error(what), details_(std::move(details)) {}
  const std::string& details() const noexcept { return details_; }
  void set_details(std::string d) { details_ = std::move(d); }

 private:
  std::string details_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace flexmsm
