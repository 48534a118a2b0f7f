#pragma once

#include <stdexcept>
#include <string>

namespace patchdiff {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Model or experiment misconfiguration: unvalidated spec, alpha out of range, ...
struct ConfigError : Error {
  using Error::Error;
};

// Population scale outside the admissible set (N < N_min, non-integral N_i).
struct RangeError : Error {
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
struct DomainError : Error {
  using Error::Error;
};

// A numerical invariant broke during a computation.
struct InvariantError : Error {
  using Error::Error;
};

// Operation needs a polynomial (or affine) drift.
struct UnsupportedDriftError : Error {
  using Error::Error;
};

}  // namespace patchdiff
