#pragma once

#include <stdexcept>
#include <string>

namespace sail {

// Base for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mismatched tensor shapes, widths or lengths.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf, zero norms, degenerate statistics.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration keys, values or argument combinations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace sail
