#pragma once

#include <stdexcept>
#include <string>

namespace irtimpute {

// Base for every error the library raises. The CLI maps the three families
// (data, scorer, usage) to distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Problems with the input data or its shape.
class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

class CategoryRangeError : public DataError {
 public:
  using DataError::DataError;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class NotEstimableError : public DataError {
 public:
  using DataError::DataError;
};

class LinkingError : public DataError {
 public:
  using DataError::DataError;
};

class DegenerateError : public DataError {
 public:
  using DataError::DataError;
};

class UnsupportedDesignError : public DataError {
 public:
  using DataError::DataError;
};

class RangeError : public DataError {
 public:
  using DataError::DataError;
};

class NotImputableError : public DataError {
 public:
  using DataError::DataError;
};

class CalibrationError : public DataError {
 public:
  using DataError::DataError;
};

// Anything that went wrong talking to, or interpreting, a scorer.
class ScorerError : public Error {
 public:
  using Error::Error;
};

// The scorer answered, but the answer was unusable.
class ScorerProtocolError : public ScorerError {
 public:
  ScorerProtocolError(const std::string& what, std::string raw_output)
      : ScorerError(what), raw_output_(std::move(raw_output)) {}
  const std::string& raw_output() const noexcept { return raw_output_; }

 private:
  std::string raw_output_;
};

// The scorer could not be reached (retryable).
class ScorerTransportError : public ScorerError {
 public:
  using ScorerError::ScorerError;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace irtimpute
