#include "pcs/optim.hpp"

namespace pcs {

void Sgd::add_group(std::vector<Tensor> params, float weight_decay) {
  for (auto& p : params) {
    slots_.push_back(Slot{p, std::vector<float>(p.numel(), 0.0f), weight_decay});
  }
}

void Sgd::step(float lr, float momentum) {
  for (auto& slot : slots_) {
    auto p = slot.param.mutable_data();
    auto g = slot.param.grad();
    const bool has_grad = !g.empty();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float gi = has_grad ? g[i] : 0.0f;
      slot.velocity[i] = momentum * slot.velocity[i] + gi + slot.weight_decay * p[i];
      p[i] -= lr * slot.velocity[i];
    }
    slot.param.clear_grad();
  }
}

void Sgd::zero_grad() {
  for (auto& slot : slots_) slot.param.clear_grad();
}

std::size_t Sgd::parameter_count() const {
  std::size_t n = 0;
  for (const auto& slot : slots_) n += slot.param.numel();
  return n;
}

}  // namespace pcs
