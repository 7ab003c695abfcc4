#pragma once

#include <stdexcept>

namespace mmotdc {

/// Malformed input: shape mismatch, invalid partition, bad configuration value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of a function (negative mass, zero marginal, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace mmotdc
