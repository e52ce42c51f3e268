#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace progspace {

enum class ErrorKind {
  syntax,
  arity,
  invalid_argument,
  capacity,
  io,
  hash_mismatch,
  stale_upstream,
  malformed,
  budget_exhausted,
  missing_coverage,
  count_mismatch,
};

const char* to_string(ErrorKind kind);

/// Base exception for everything the library throws on purpose.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Parse failure at a byte offset of the input.
class ParseError : public Error {
 public:
  ParseError(ErrorKind kind, std::size_t position, const std::string& message)
      : Error(kind, message + " at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

}  // namespace progspace
