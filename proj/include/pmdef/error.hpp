#pragma once

#include <stdexcept>
#include <string>

namespace pmdef {

// Base of every error thrown by the library. The CLI maps subclasses of
// ValidationError to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied something invalid: bad shapes, parameters, files, configs.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ParameterError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class SpecError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ContractError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class CompositionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// File parsing failures. Each corruption mode has its own type.
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class MagicError : public ParseError {
 public:
  using ParseError::ParseError;
};

class TruncationError : public ParseError {
 public:
  using ParseError::ParseError;
};

class LengthMismatchError : public ParseError {
 public:
  using ParseError::ParseError;
};

class SpecMismatchError : public ParseError {
 public:
  using ParseError::ParseError;
};

class CountMismatchError : public ParseError {
 public:
  using ParseError::ParseError;
};

class LabelRangeError : public ParseError {
 public:
  using ParseError::ParseError;
};

class MissingFileError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Runtime failures (not the caller's fault).
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pmdef
