#pragma once

#include <stdexcept>
#include <string>

namespace claims {

// Base for all errors raised by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape disagreement; message names both shapes.
struct DimensionError : Error {
  using Error::Error;
};

// Out-of-range index; message names position and bound.
struct IndexError : Error {
  using Error::Error;
};

// Invalid configuration (bad enum, nonpositive dims, bad fractions...).
struct ConfigError : Error {
  using Error::Error;
};

// Invalid data input (empty claim, nonpositive amount, unparseable line...).
struct InputError : Error {
  using Error::Error;
};

// Metric undefined for the given inputs (single-class labels, potential <= 0).
struct MetricError : Error {
  using Error::Error;
};

// Numerical failure (divergence, non-finite values where finite required).
struct NumericError : Error {
  using Error::Error;
};

// API misuse (non-scalar loss passed to backward, foreign-tape operands).
struct ContractError : Error {
  using Error::Error;
};

// File read/write failure.
struct IoError : Error {
  using Error::Error;
};

}  // namespace claims
