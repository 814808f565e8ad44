#pragma once

#include <stdexcept>
#include <string>

namespace pdarts {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  /// Short machine-readable category used by the CLI error line.
  virtual const char* kind() const noexcept { return "error"; }
};

/// Tensor shapes that do not fit an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "shape"; }
};

/// Arguments outside an operation's precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "invalid_argument"; }
};

/// Malformed genotype text, checkpoint bytes or dataset files.
class FormatError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "format"; }
};

/// Rejected run configuration. The message names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const char* kind() const noexcept override { return "config"; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Non-finite loss or activations during training.
class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

}  // namespace pdarts
