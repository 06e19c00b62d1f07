#pragma once

#include <stdexcept>
#include <string>

namespace boltzctl {

// Bad input or violated precondition (CLI exit code 2).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A numerical invariant failed (CLI exit code 3).
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kLogGuard = 700.0;

}  // namespace boltzctl
