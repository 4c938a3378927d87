#pragma once

#include <stdexcept>
#include <string>

namespace paconv {

// Error taxonomy. Callers can catch the base type or a specific kind.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or dimension violation (k > N, mismatched row counts, ...).
struct SizeError : Error {
  using Error::Error;
};

// Bad input values: non-finite coordinates, malformed data, unknown mode names.
struct InputError : Error {
  using Error::Error;
};

// API contract violation, e.g. a backward cache paired with the wrong layer.
struct ContractError : Error {
  using Error::Error;
};

// Numerical failure: divergence, non-finite loss, precision refusal.
struct NumericalError : Error {
  using Error::Error;
};

// File parsing failure; message carries the location when known.
struct ParseError : Error {
  using Error::Error;
};

}  // namespace paconv
