#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stwd {

// Base of every error this library throws. `kind()` is the stable,
// machine-readable tag the CLI reports in its error JSON.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "invalid_argument"; }
};

// A Cholesky pivot fell below tolerance. `minor()` is the 1-based order of the
// first leading minor that is not (numerically) positive.
class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite(std::size_t minor, const std::string& what);
  std::size_t minor() const noexcept { return minor_; }
  const char* kind() const noexcept override { return "not_positive_definite"; }

 private:
  std::size_t minor_;
};

class FitFailure : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "fit_failure"; }
};

// Throws InvalidArgument with `message` when `condition` is false.
void require(bool condition, const std::string& message);

}  // namespace stwd
