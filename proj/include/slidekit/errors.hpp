#pragma once

#include <stdexcept>
#include <string>

namespace slidekit {

// Base for everything the library throws on bad data or configuration.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Binary container with a bad magic, version or truncated payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace slidekit
