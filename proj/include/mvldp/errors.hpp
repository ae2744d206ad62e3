#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mvldp {

/// Invalid argument value (out-of-range parameter, malformed grid, ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input outside the mathematical domain of an operation (f(0) != x, t > T, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Configuration the implementation deliberately does not handle.
class UnsupportedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical scheme produced non-finite state or missed its tolerance.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Bad command line or config file; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mvldp
