#pragma once

#include <stdexcept>
#include <string>

namespace dm {

// Base for every error raised by the library. Subclasses let the CLI map
// failures onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed config, unknown preset, invalid CLI usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing or corrupt dataset / checkpoint / log files.
class DataError : public Error {
 public:
  using Error::Error;
};

// Tensor or parameter shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradients during training.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace dm
