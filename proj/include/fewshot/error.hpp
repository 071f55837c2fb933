#pragma once

#include <stdexcept>
#include <string>

namespace fewshot {

// Base for every error raised by the library. The CLI maps the subclasses
// onto process exit codes (config 2, data 3, numerical 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller violated an API precondition (non-scalar loss, bad axis, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf reached a place where only finite values are allowed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace fewshot
