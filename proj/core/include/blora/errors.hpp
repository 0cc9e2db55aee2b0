#pragma once

#include <stdexcept>
#include <string>

namespace blora {

// Shapes that cannot be combined (matmul inner dims, elementwise mismatch).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A tensor has the wrong rank or size for the requested operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Empty or inverted numeric interval.
class RangeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside an enumerated domain (e.g. unsupported bitwidth).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Train-only operation invoked in eval mode, or vice versa.
class ModeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid configuration (model dims, run config, audit config).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Reverse pass requested without a recorded forward pass.
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Loss or gradient became NaN/Inf during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace blora
