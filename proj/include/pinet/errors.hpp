#pragma once

#include <stdexcept>
#include <string>

namespace pinet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A constraint description is empty or inconsistent (e.g. A v = b has no
/// solution, l > u).
class InfeasibleConstraintError : public Error {
 public:
  using Error::Error;
};

/// An iteration produced a non-finite value or a factorization failed.
class NumericalFailure : public Error {
 public:
  NumericalFailure(const std::string& what, int iteration = -1)
      : Error(what), iteration_(iteration) {}

  /// Iteration index at which the failure was detected, -1 when unknown.
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

/// Malformed file, config entry, or serialized container.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A file the caller depends on does not exist.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace pinet
