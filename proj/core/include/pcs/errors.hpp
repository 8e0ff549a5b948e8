#pragma once

#include <stdexcept>
#include <string>

namespace pcs {

/// Tensor extents or channel counts that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid hyper-parameters, graph wiring, or file contents.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Misuse of the autograd engine (non-scalar root, consumed graph, ...).
class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// NaN or Inf observed where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pcs
