#pragma once

#include <stdexcept>
#include <string>

namespace panp {

/// Base class for all runtime failures raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user-supplied configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace panp
