#pragma once

#include <stdexcept>
#include <string>

namespace qrcal {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes passed to an op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of an operation (log of a nonpositive value,
/// PIT outside [0,1], empty inputs, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration, manifest, or data file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace qrcal
