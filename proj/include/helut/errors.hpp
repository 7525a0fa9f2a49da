// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace helut {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid parameters or malformed configuration.
class ParameterError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public ParameterError {
 public:
  ConfigError(const std::string& what, std::string source = {}, int line = 0, int column = 0)
      : ParameterError(format(what, source, line, column)),
        source_(std::move(source)),
        line_(line),
        column_(column) {}

  const std::string& source() const { return source_; }
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  static std::string format(const std::string& what, const std::string& source, int line,
                            int column) {
    std::string out;
    if (!source.empty()) out += source;
    if (line > 0) {
      out += ":" + std::to_string(line);
      if (column > 0) out += ":" + std::to_string(column);
    }
    if (!out.empty()) out += ": ";
    return out + what;
  }

  std::string source_;
  int line_;
  int column_;
};

class IndexError : public ParameterError {
 public:
  using ParameterError::ParameterError;
};

class LayoutError : public ParameterError {
 public:
  using ParameterError::ParameterError;
};

class PlanningError : public ParameterError {
 public:
  using ParameterError::ParameterError;
};

class CalibrationError : public ParameterError {
 public:
  using ParameterError::ParameterError;
};

// Missing or unreadable file.
class IoError : public ParameterError {
 public:
  using ParameterError::ParameterError;
};

// Slot or memory capacity exceeded.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Multiplicative depth exhausted without a bootstrap.
class LevelError : public Error {
 public:
  using Error::Error;
};

}  // namespace helut
