#ifndef SSRE_ERRORS_HPP
#define SSRE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace ssre {

// Error categories surfaced by the CLI as distinct exit messages.

// Malformed input files (JSONL records, checkpoints, config syntax).
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally valid data that violates an invariant (bad spans, unlabelled
// records where labels are required, shape mismatches).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration values or unknown parameter names.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Constrained decoding could not produce a constraint-complete hypothesis
// within the length budget.
class UnsatisfiableError : public std::runtime_error {
 public:
  explicit UnsatisfiableError(const std::string& msg)
      : std::runtime_error(msg) {}
};

// Filesystem failures, always carrying the offending path.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ssre

#endif  // SSRE_ERRORS_HPP
