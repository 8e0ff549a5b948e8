#include "pcs/shrinking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pcs/errors.hpp"
#include "pcs/ops.hpp"
#include "pcs/salience.hpp"

namespace pcs {

void ShrinkConfig::validate() const {
  if (!(lambda_base >= 0.0f) || !std::isfinite(lambda_base)) throw ConfigError("lambda_base must be finite and >= 0");
  if (t_max == 0) throw ConfigError("t_max must be positive");
  if (!(k_fraction > 0.0f && k_fraction < 1.0f)) throw ConfigError("k_fraction must lie in (0, 1)");
  if (!(alpha > 0.0f && alpha <= 1.0f)) throw ConfigError("alpha must lie in (0, 1]");
}

std::size_t shrink_count(const ShrinkConfig& cfg, std::size_t channels) {
  if (channels == 0) throw ConfigError("shrink_count: layer has no channels");
  const auto k = static_cast<std::size_t>(std::floor(cfg.k_fraction * static_cast<float>(channels)));
  return std::min(k, channels - 1);
}

SalienceState SalienceState::init(std::size_t channels, float alpha, std::size_t k) {
  if (k >= channels) {
    throw ConfigError("salience state: K=" + std::to_string(k) + " must be below C=" + std::to_string(channels));
  }
  SalienceState state;
  state.running.assign(channels, 0.5f);
  state.alpha = alpha;
  state.k = k;
  return state;
}

void ema_update(SalienceState& state, const Tensor& s_batch, Mode mode) {
  if (mode != Mode::train) throw ConfigError("ema_update: running salience is frozen outside training");
  if (s_batch.ndim() != 2 || s_batch.dim(1) != state.channels()) {
    throw ShapeError("ema_update: expected [N," + std::to_string(state.channels()) + "], got " +
                     shape_str(s_batch.shape()));
  }
  const std::size_t n = s_batch.dim(0), c = state.channels();
  auto s = s_batch.data();
  for (std::size_t j = 0; j < c; ++j) {
    float mean = 0.0f;
    for (std::size_t i = 0; i < n; ++i) mean += s[i * c + j];
    mean /= static_cast<float>(n);
    float next = (1.0f - state.alpha) * state.running[j] + state.alpha * mean;
    if (next < std::numeric_limits<float>::min()) next = 0.0f;
    state.running[j] = next;
  }
}

const std::vector<std::size_t>& select_topk(SalienceState& state) {
  if (state.k >= state.channels()) {
    throw ConfigError("select_topk: K=" + std::to_string(state.k) + " must be below C=" +
                      std::to_string(state.channels()));
  }
  state.last_selection = lowest_indices(state.running, state.k);
  return state.last_selection;
}

Tensor shrink_loss(const Tensor& s, std::span<const std::size_t> selection) {
  if (s.ndim() != 2) throw ShapeError("shrink_loss: expects [N,C], got " + shape_str(s.shape()));
  const std::size_t n = s.dim(0), c = s.dim(1);
  std::vector<float> indicator(c, 0.0f);
  for (auto idx : selection) {
    if (idx >= c) throw ConfigError("shrink_loss: selected channel " + std::to_string(idx) + " >= " + std::to_string(c));
    indicator[idx] = 1.0f;
  }
  auto sd = s.data();
  float total = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    for (auto idx : selection) total += sd[i * c + idx];
  }
  const float value = total / static_cast<float>(n);
  Tensor sc = s;
  return make_result(Shape{1}, std::vector<float>{value}, "shrink_loss", {s},
                     [sc, indicator = std::move(indicator), n, c](std::span<const float> g) mutable {
                       auto gs = sc.grad_buffer();
                       const float w = g[0] / static_cast<float>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < c; ++j) gs[i * c + j] += w * indicator[j];
                       }
                     });
}

Tensor shrink_loss_per_sample(const Tensor& s, const std::vector<std::vector<std::size_t>>& selection) {
  if (s.ndim() != 2 || selection.size() != s.dim(0)) {
    throw ShapeError("shrink_loss_per_sample: one selection per row required");
  }
  const std::size_t n = s.dim(0), c = s.dim(1);
  std::vector<float> indicator(n * c, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto idx : selection[i]) {
      if (idx >= c) throw ConfigError("shrink_loss_per_sample: channel index out of range");
      indicator[i * c + idx] = 1.0f;
    }
  }
  auto sd = s.data();
  float total = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    for (auto idx : selection[i]) total += sd[i * c + idx];
  }
  Tensor sc = s;
  return make_result(Shape{1}, std::vector<float>{total / static_cast<float>(n)}, "shrink_loss_per_sample",
                     {s}, [sc, indicator = std::move(indicator), n](std::span<const float> g) mutable {
                       auto gs = sc.grad_buffer();
                       const float w = g[0] / static_cast<float>(n);
                       for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += w * indicator[i];
                     });
}

float lambda_at(const ShrinkConfig& cfg, std::size_t epoch) {
  const float ratio = static_cast<float>(std::min(epoch, cfg.t_max)) / static_cast<float>(cfg.t_max);
  return cfg.lambda_base * ratio * ratio;
}

Tensor hybrid_objective(const Tensor& task_loss, std::span<const Tensor> shrink_losses, float lambda) {
  if (lambda < 0.0f) throw ConfigError("hybrid_objective: lambda must be >= 0");
  if (shrink_losses.empty() || lambda == 0.0f) return task_loss;
  Tensor combined = shrink_losses[0];
  for (std::size_t i = 1; i < shrink_losses.size(); ++i) combined = ops::add(combined, shrink_losses[i]);
  return ops::add(task_loss, ops::scale(combined, lambda));
}

}  // namespace pcs
