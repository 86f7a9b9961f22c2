#pragma once

#include <stdexcept>

#include "mugen/core/tensor.hpp"

namespace mugen {

/// Invalid run or model configuration (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Unreadable or malformed input data (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mugen
