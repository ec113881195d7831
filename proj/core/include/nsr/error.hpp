#pragma once

#include <stdexcept>
#include <string>

namespace nsr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or image shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument outside its admissible range (temperature, sigma, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// An inconsistent model, sparsity or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where a finite value is required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. Subclasses identify the precise failure.
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ShapeMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class BadMaxvalError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// File missing or unreadable/unwritable.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace nsr
