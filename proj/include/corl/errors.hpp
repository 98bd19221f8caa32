#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace corl {

/// Shapes of two operands (or an operand and a configuration) disagree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Caller supplied an input outside an operation's domain.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration field has an invalid value or is unknown.
class ConfigError : public InputError {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : InputError(field + ": " + what), field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A computation produced NaN or Inf.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A serialized artifact is malformed. Carries the byte offset of the failure.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Training stopped because a loss term became non-finite.
class TrainingAbort : public std::runtime_error {
 public:
  TrainingAbort(const std::string& what, std::string term)
      : std::runtime_error(what), term_(std::move(term)) {}

  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

}  // namespace corl
