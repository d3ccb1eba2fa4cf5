// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace gld {

/// Base of every error the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file content: bad magic, truncated payload, bad JSON.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that violates a value constraint (NaN, out-of-range target, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument value (k = 0, empty rows, unsupported sizes).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Incompatible shapes between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read, or written.
class IoError : public Error {
 public:
  using Error::Error;
};

class EmptySelectionError : public Error {
 public:
  using Error::Error;
};

}  // namespace gld
