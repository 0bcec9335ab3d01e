#pragma once

#include <stdexcept>
#include <string>

namespace afn {

// Error taxonomy. Each class maps onto one process exit code / C API status
// (see c_api.h): config 2, data 3, numeric 4, anything else 5.

/// Invalid configuration or arguments (bad hyperparameters, unknown names).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or unavailable data (files, schemas, missing modalities).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values where finite ones are required (NaN loss, Inf gradient).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Incompatible tensor shapes. Message always carries both shapes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace afn
