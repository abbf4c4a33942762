#pragma once

#include <stdexcept>
#include <string>

namespace mmnet {

/// Tensor shapes that do not fit an operation.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid hyperparameters or configuration documents.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed inputs such as token sequences or empty splits.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse, e.g. calling backward twice on one tape.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Broken internal invariants (should never fire).
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Training diverged (non-finite loss or activations).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mmnet
