#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dvp {

/// Raised when a distribution would have no mass anywhere.
class EmptySupportError : public std::domain_error {
 public:
  EmptySupportError() : std::domain_error("empty support") {}
};

/// Raised by fixed-point solvers that exhaust their iteration budget.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(std::string what, std::vector<double> last_iterate, double residual)
      : std::runtime_error(std::move(what)),
        last_iterate_(std::move(last_iterate)),
        residual_(residual) {}

  const std::vector<double>& last_iterate() const { return last_iterate_; }
  double residual() const { return residual_; }

 private:
  std::vector<double> last_iterate_;
  double residual_;
};

/// Raised when exhaustive enumeration would exceed the trajectory cap.
class EnumerationCapError : public std::length_error {
 public:
  EnumerationCapError(std::size_t requested, std::size_t cap)
      : std::length_error("trajectory enumeration of " + std::to_string(requested) +
                          " sequences exceeds cap " + std::to_string(cap)) {}
};

}  // namespace dvp
