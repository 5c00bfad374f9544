#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace weylab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered, or a quantity that is undefined for the input.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Requested output would exceed the desk-scale size guard.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration value; `key()` names the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error("config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Malformed text input; `line()` is 1-based, 0 when not line-oriented.
class FormatError : public Error {
 public:
  FormatError(std::string source, std::size_t line, const std::string& what)
      : Error(source + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
        source_(std::move(source)),
        line_(line) {}
  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string source_;
  std::size_t line_;
};

}  // namespace weylab
