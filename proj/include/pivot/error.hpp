#pragma once

#include <stdexcept>
#include <string>

namespace pivot {

/// Bad input: malformed files, violated preconditions, invalid configuration.
/// The CLI maps this family to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A statistic whose denominator is empty (e.g. no connective steps at all).
class UndefinedStatistic : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Failures of a model backend (remote server, protocol, capability). Exit code 3.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CapabilityError : public BackendError {
 public:
  using BackendError::BackendError;
};

class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};

}  // namespace pivot
