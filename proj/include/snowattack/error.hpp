#pragma once

#include <stdexcept>
#include <string>

namespace snow {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent file contents (headers, payload sizes, values).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Points at or behind the camera plane, invalid poses.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Rejection sampling ran out of its retry budget.
class SamplingError : public Error {
 public:
  using Error::Error;
};

// Mismatched array dimensions between inputs.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad experiment configuration. Carries the 1-based line number when the
// error originates from a config file (0 otherwise).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace snow
