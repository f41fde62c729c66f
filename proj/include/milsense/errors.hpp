#pragma once

#include <stdexcept>
#include <string>

namespace milsense {

// Exit-code classes used by the CLI: input/validation errors map to 2,
// numerical/optimization errors to 3.

class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public InputError {
 public:
  ParseError(const std::string& what, long line = -1)
      : InputError(line >= 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

class DegenerateGeometryError : public InputError {
 public:
  using InputError::InputError;
};

class UnsupportedKernelError : public InputError {
 public:
  using InputError::InputError;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OptimizationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace milsense
