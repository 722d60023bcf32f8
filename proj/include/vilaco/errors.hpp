#pragma once

#include <stdexcept>
#include <string>

namespace vilaco {

// Invalid configuration or hyper-parameter combination (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad caller-supplied value (unknown label, empty sequence, negative epoch).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tensor shapes that cannot be combined.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values where finite ones are required (CLI exit code 4).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File system failures (CLI exit code 3).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent dataset manifest.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint version/shape mismatch or corrupt container.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vilaco
