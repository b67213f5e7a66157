// Copyright 2026 The kktrecon Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kktrecon {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree with the model or with each other.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration value. `field()` names the offending
/// field path when one is known (e.g. "model.widths[1]").
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message, std::string field = {})
      : Error(field.empty() ? message : field + ": " + message), message_(message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }
  /// The message without the field prefix.
  const std::string& message() const { return message_; }

 private:
  std::string message_;
  std::string field_;
};

/// Malformed file contents. `offset()` is the byte offset where parsing
/// stopped, when meaningful.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t offset)
      : Error(message + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  explicit ParseError(const std::string& message) : Error(message), offset_(0) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Non-finite values or failed convergence.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& message, std::size_t last_finite_step)
      : Error(message), last_finite_step_(last_finite_step) {}
  std::size_t last_finite_step() const { return last_finite_step_; }

 private:
  std::size_t last_finite_step_;
};

/// Requested derivative is not defined for the given surrogate mode.
class UnsupportedModeError : public Error {
 public:
  using Error::Error;
};

}  // namespace kktrecon
