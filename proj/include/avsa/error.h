#pragma once

#include <stdexcept>
#include <string>

namespace avsa {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind { kConfig, kData, kNumeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

// Bad input data: NaNs, wrong lengths, mismatched shapes, I/O failures.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class ShapeError : public DataError {
 public:
  explicit ShapeError(const std::string& what) : DataError("shape error: " + what) {}
};

class LengthError : public DataError {
 public:
  explicit LengthError(const std::string& what) : DataError("length error: " + what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return 2;
    case ErrorKind::kData: return 3;
    case ErrorKind::kNumeric: return 4;
  }
  return 1;
}

}  // namespace avsa
