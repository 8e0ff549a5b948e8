#pragma once

#include <vector>

#include "pcs/tensor.hpp"

namespace pcs {

/// SGD with momentum and per-group weight decay:
///   v <- momentum * v + g + weight_decay * p
///   p <- p - lr * v
/// Gradients are cleared after each step.
class Sgd {
 public:
  void add_group(std::vector<Tensor> params, float weight_decay);
  void step(float lr, float momentum);
  void zero_grad();

  std::size_t parameter_count() const;

 private:
  struct Slot {
    Tensor param;
    std::vector<float> velocity;
    float weight_decay;
  };
  std::vector<Slot> slots_;
};

}  // namespace pcs
