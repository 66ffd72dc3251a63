#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fastcaps {

// Base of everything the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (mismatched formats, bad shapes,
// accumulator overflow). The CLI maps these to exit code 1.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Argument outside the mathematical domain of an operation, e.g. log(0).
class DomainError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Malformed input file. Carries the byte offset where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace fastcaps
