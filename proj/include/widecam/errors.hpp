#pragma once

#include <stdexcept>
#include <string>

namespace widecam {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Point or pixel outside the valid set of a camera model.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Intrinsic parameter vector violating a model invariant.
class InvalidParameters : public Error {
 public:
  using Error::Error;
};

/// Iterative inverse (Kannala-Brandt) failed to reach its tolerance.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class PoseSamplingError : public Error {
 public:
  using Error::Error;
};

class DegenerateViewError : public Error {
 public:
  using Error::Error;
};

class InitializationError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class LinearSolveError : public Error {
 public:
  using Error::Error;
};

}  // namespace widecam
