#pragma once

#include <stdexcept>
#include <string>

namespace urgr {

// Bad argument or precondition violation at an API boundary.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A lookup that legitimately found nothing (e.g. no person in a frame).
class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Loss went non-finite during optimisation.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Archive or file content failed validation (checksum, truncation, schema).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A persisted artifact does not match what the caller asked for.
class ConfigMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Line-addressable parse failure for line-oriented inputs.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace urgr
