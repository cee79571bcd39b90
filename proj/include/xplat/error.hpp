#pragma once

#include <stdexcept>
#include <string>

namespace xplat {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad caller input: malformed config, violated precondition, unknown names.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Request exceeds what the process can hold (qubit cap, disk, memory).
class ResourceError : public Error {
 public:
  using Error::Error;
};

// Computation produced a degenerate or non-finite quantity.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A circuit needs a two-qubit gate on a pair that the device does not couple.
class RoutingError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace xplat
