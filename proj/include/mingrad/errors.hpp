#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mingrad {

// Base of every error thrown by the library. Validation errors (bad input,
// unsupported operation) and numerical failures are told apart by
// numerical(), which the CLI maps to exit codes 1 and 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual bool numerical() const noexcept { return false; }
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class Unsupported : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
  bool numerical() const noexcept override { return true; }
};

class SingularSystem : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NotConverged : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class TapeMismatch : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class InsufficientData : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DegenerateInstance : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// A NaN or Inf appeared at iteration `t` of an inner or outer loop.
class NonFinite : public NumericalError {
 public:
  NonFinite(std::size_t t, const std::string& what)
      : NumericalError("non-finite value at t=" + std::to_string(t) + ": " + what), t_(t) {}
  std::size_t t() const noexcept { return t_; }

 private:
  std::size_t t_;
};

}  // namespace mingrad
