#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace prospr {

/// Base class for every failure raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible for an op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An op or a loss produced NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Differentiation request that the graph cannot satisfy.
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Malformed file. `offset()` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Invalid configuration or arguments supplied by the user.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace prospr
