#pragma once

#include <stdexcept>
#include <string>

namespace specmix {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand extents disagree.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid argument value (kernel size, band index, unknown activation...).
struct ParameterError : Error {
  using Error::Error;
};

// Input violates a documented precondition of an operation.
struct ContractError : Error {
  using Error::Error;
};

// A non-finite value was produced.
struct NumericError : Error {
  using Error::Error;
};

// Batch norm in train mode requires at least two samples.
struct BatchError : Error {
  using Error::Error;
};

// Second-order differentiation requested through an op that lacks a rule.
struct UnsupportedOpError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Malformed file contents. Carries the byte offset where parsing failed.
struct FormatError : Error {
  FormatError(const std::string& what, long long offset = -1)
      : Error(offset >= 0 ? what + " (at byte offset " + std::to_string(offset) + ")" : what),
        offset(offset) {}
  long long offset;
};

struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace specmix
