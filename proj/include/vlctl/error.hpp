#pragma once

#include <stdexcept>
#include <string>

namespace vlctl {

// Base of every error thrown by the library. The CLI maps ConfigError and
// ParseError to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
  using Error::Error;
};

// Invalid layout, experiment config or training config.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Malformed CSV or JSON input. Messages name the row/column or JSON pointer.
class ParseError : public Error {
public:
  using Error::Error;
};

class DimensionError : public Error {
public:
  using Error::Error;
};

class CheckpointError : public Error {
public:
  using Error::Error;
};

class CheckpointVersionError : public CheckpointError {
public:
  using CheckpointError::CheckpointError;
};

class CheckpointShapeError : public CheckpointError {
public:
  using CheckpointError::CheckpointError;
};

class CheckpointCorruptError : public CheckpointError {
public:
  using CheckpointError::CheckpointError;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
  DivergenceError(std::size_t epoch, const std::string& what)
      : Error("training diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

private:
  std::size_t epoch_;
};

class IoError : public Error {
public:
  using Error::Error;
};

} // namespace vlctl
