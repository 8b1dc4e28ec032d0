// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace earn {

/// Raised when a caller breaks a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid model, register or experiment configuration. `field()` names the
/// offending setting so command-line tools can report it.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Sequence longer than the model's positional capacity.
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Malformed input file. `line()` is 1-based; 0 when not line-oriented.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

#define EARN_EXPECTS(cond, msg)                      \
  do {                                               \
    if (!(cond)) throw ::earn::ContractViolation(msg); \
  } while (0)

}  // namespace earn
