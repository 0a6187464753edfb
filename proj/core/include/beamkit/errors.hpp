#pragma once

#include <stdexcept>
#include <string>

namespace beamkit {

// Iteration limit hit before the requested accuracy. Message carries the
// offending arguments so failures in long pipelines can be traced.
class ConvergenceError : public std::runtime_error {
 public:
  explicit ConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

// Requested geometry does not fit the available aperture / grid.
class ApertureError : public std::runtime_error {
 public:
  explicit ApertureError(const std::string& what) : std::runtime_error(what) {}
};

// Input data cannot constrain the requested fit.
class FitError : public std::runtime_error {
 public:
  explicit FitError(const std::string& what) : std::runtime_error(what) {}
};

// A physical-state invariant (trace, positivity, norm) was violated.
class StateError : public std::runtime_error {
 public:
  explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace beamkit
