#pragma once

#include <stdexcept>
#include <string>

namespace uanll {

// Dimensions of two operands do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite or otherwise malformed numeric input.
class InvalidInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed file or byte stream.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Object used in a state it was not prepared for (e.g. stale forward cache).
class InvalidStateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace uanll
