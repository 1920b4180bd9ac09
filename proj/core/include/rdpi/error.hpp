#pragma once

#include <stdexcept>
#include <string>

namespace rdpi {

/// Base of every error raised by the library. `exit_code()` is the process
/// status the CLI reports for it.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  [[nodiscard]] virtual int exit_code() const noexcept { return 1; }
  [[nodiscard]] virtual const char* kind() const noexcept { return "error"; }
};

/// Invalid configuration or arguments (bad ranges, unknown flags).
class ConfigError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 2; }
  [[nodiscard]] const char* kind() const noexcept override { return "config"; }
};

/// Index outside a valid range (diffusion step, node id).
class IndexError : public ConfigError {
 public:
  using ConfigError::ConfigError;
  [[nodiscard]] const char* kind() const noexcept override { return "index"; }
};

/// Malformed or inconsistent data (ragged CSV, empty masks, bad shapes).
class DataError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 3; }
  [[nodiscard]] const char* kind() const noexcept override { return "data"; }
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
  [[nodiscard]] const char* kind() const noexcept override { return "dimension"; }
};

/// Non-finite values, negative radicands, divergence.
class NumericError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 4; }
  [[nodiscard]] const char* kind() const noexcept override { return "numeric"; }
};

class DomainError : public NumericError {
 public:
  using NumericError::NumericError;
  [[nodiscard]] const char* kind() const noexcept override { return "domain"; }
};

}  // namespace rdpi
