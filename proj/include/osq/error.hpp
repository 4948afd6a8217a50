#pragma once

#include <stdexcept>
#include <string>

namespace osq {

// Error categories map one-to-one onto the C API status codes and the CLI
// exit codes (usage 1, validation 2, numerical 3).
enum class ErrorKind {
  Usage = 1,
  Validation = 2,
  Numerical = 3,
  Io = 4,
  State = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Invalid parameter combination or precondition violated by the caller.
class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

// Malformed or inconsistent input data (graph files, configs, CSVs).
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

// Shape mismatch between tensor operands or model/graph dimensions.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

// Exhaustive algorithms refusing inputs beyond their enumeration cap.
class SizeError : public Error {
 public:
  explicit SizeError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

// Non-finite values, divergence, undefined quantities.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::Numerical, what) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& what) : Error(ErrorKind::State, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

}  // namespace osq
