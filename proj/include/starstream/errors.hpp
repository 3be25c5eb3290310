#pragma once

#include <stdexcept>
#include <string>

namespace starstream {

/// Error classes map one-to-one onto CLI exit codes (see tools/starstream.cpp).
enum class ErrorKind {
  kIo = 1,
  kUsage = 2,
  kValidation = 3,
  kProtocol = 4,
  kStall = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::kValidation, what) {}
};

/// Malformed input file; carries the 1-based line number of the offending row.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : ValidationError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class AlignmentError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& what) : Error(ErrorKind::kProtocol, what) {}
};

/// The external predictor did not answer within its deadline.
class PredictorTimeout : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class StallError : public Error {
 public:
  explicit StallError(const std::string& what) : Error(ErrorKind::kStall, what) {}
};

}  // namespace starstream
