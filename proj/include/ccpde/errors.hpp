#pragma once

#include <stdexcept>
#include <string>

namespace ccpde {

/// Violated precondition: wrong shapes, out-of-range arguments, unsupported options.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite or otherwise unusable value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or insufficient input data (files, tables, histories).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ccpde
