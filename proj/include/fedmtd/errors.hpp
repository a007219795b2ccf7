#pragma once

#include <stdexcept>
#include <string>

namespace fedmtd {

// Invalid configuration or precondition on a config value.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched vector/matrix dimensions.
class ShapeError : public std::runtime_error {
public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values encountered during numeric work.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse (e.g. stale forward cache handed to backward).
class UsageError : public std::logic_error {
public:
  explicit UsageError(const std::string& msg) : std::logic_error(msg) {}
};

// Malformed input file.
class ParseError : public std::runtime_error {
public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fedmtd
