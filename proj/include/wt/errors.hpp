#pragma once

#include <stdexcept>
#include <string>

namespace wt {

// Every library error carries a short machine-readable kind so the CLI can
// report failures as a single line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& message) : Error("dimension", message) {}
};

class DegenerateRowError : public Error {
 public:
  explicit DegenerateRowError(const std::string& message) : Error("degenerate_row", message) {}
};

class RecordError : public Error {
 public:
  explicit RecordError(const std::string& message) : Error("record", message) {}
};

class ValueError : public Error {
 public:
  explicit ValueError(const std::string& message) : Error("value", message) {}
};

class ConstraintError : public Error {
 public:
  explicit ConstraintError(const std::string& message) : Error("constraint", message) {}
};

class NumericError : public Error {
 public:
  NumericError(const std::string& message, long step) : Error("numeric", message), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& message) : Error("format", message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

}  // namespace wt
