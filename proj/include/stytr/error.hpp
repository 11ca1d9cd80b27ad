#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stytr {

// Base of every error the library raises on bad input or state.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration key, value or mode string.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. Carries the byte offset where parsing stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Weight file could not be loaded into the requested parameter set.
class LoadError : public Error {
 public:
  using Error::Error;
};

// Missing or unusable training data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace stytr
