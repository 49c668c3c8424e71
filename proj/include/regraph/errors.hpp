#pragma once

#include <stdexcept>
#include <string>

namespace regraph {

// Base class for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that cannot be combined.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse: calling an operation outside its preconditions.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (CSV rows, missing sites, labels).
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or schema violation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem or network failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace regraph
