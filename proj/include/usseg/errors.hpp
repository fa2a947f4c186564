#pragma once

#include <stdexcept>
#include <string>

namespace usseg {

// Error kinds. Each maps to a distinct catch site in the CLI.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : DataError {
  using DataError::DataError;
};

// Checkpoint failures.
struct ChecksumError : DataError {
  using DataError::DataError;
};

struct DimError : DataError {
  using DataError::DataError;
};

struct MissingTensorError : DataError {
  using DataError::DataError;
};

// Training aborted because a loss component went non-finite.
struct NonFiniteLossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace usseg
