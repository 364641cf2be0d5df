#pragma once

#include <stdexcept>
#include <string>

namespace modnet {

// Exit codes used by the CLI. Library code throws; the CLI maps the
// exception class to one of these.
enum ExitCode {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes (channel mismatch, concat misalignment, ...).
struct ShapeError : Error {
  using Error::Error;
};

// API contract violations: non-scalar loss node, label out of range,
// composing a composite from modules with the wrong frozen flags.
struct ContractError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

// Non-finite loss or parameters during training.
struct NumericError : Error {
  using Error::Error;
};

// IDX container problems, distinct per cause.
struct IdxMagicError : DataError {
  using DataError::DataError;
};
struct IdxTruncatedError : DataError {
  using DataError::DataError;
};
struct IdxCountMismatchError : DataError {
  using DataError::DataError;
};

// Checkpoint container problems, distinct per cause.
struct CheckpointVersionError : DataError {
  using DataError::DataError;
};
struct CheckpointChecksumError : DataError {
  using DataError::DataError;
};
struct CheckpointTruncatedError : DataError {
  using DataError::DataError;
};

}  // namespace modnet
