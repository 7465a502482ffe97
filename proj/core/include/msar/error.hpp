#pragma once

#include <stdexcept>
#include <string>

namespace msar {

// Base for every error raised by the library. The CLI maps the three
// top-level families (config, data, numeric) onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Programming errors: violated preconditions and incompatible shapes.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

class IndexError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Invalid configuration or unsupported parameter combination (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Bad or unusable input data (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

class TooShortError : public DataError {
 public:
  using DataError::DataError;
};

class VocabularyError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

// Numerical failure: singular systems, degenerate statistics, non-finite
// losses (exit code 4).
class NumericError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public NumericError {
 public:
  using NumericError::NumericError;
};

class DegenerateStatsError : public NumericError {
 public:
  using NumericError::NumericError;
};

class MetricError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace msar
