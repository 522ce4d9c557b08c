#pragma once

#include <stdexcept>
#include <string>

namespace c2f {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Raised when a computation produces NaN/Inf or is mathematically undefined
// (zero-norm cosine, all-masked softmax).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace c2f
