#pragma once

#include <stdexcept>
#include <string>

namespace fprl {

// Base of every error thrown by the library. The CLI maps the subclasses onto
// exit codes: ConfigError -> 1, DataError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain (delta <= 0, empty masked set, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Zero-norm operand where a direction is required.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Inconsistent bookkeeping: segments, index sets, tape misuse.
class StructuralError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Corrupt or mismatched checkpoint / clip file.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// NaN or infinity produced by a kernel.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace fprl
