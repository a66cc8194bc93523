#pragma once

#include <stdexcept>
#include <string>

namespace dnfn {

// Error families. The CLI maps each family to its own exit status.

/// Tensor extents do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Index (label, center, point) out of range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Not enough points to satisfy a neighbor or sample count.
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Non-finite values encountered while optimizing.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A verification step (gradient check) did not pass.
class CheckFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dnfn
