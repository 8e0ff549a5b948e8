#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pcs/layers.hpp"
#include "pcs/tensor.hpp"

namespace pcs {

struct ShrinkConfig {
  float lambda_base = 6e-6f;
  std::size_t t_max = 60;             // shrinking epochs
  float k_fraction = 0.5f;            // K = floor(k_fraction * C_out)
  float alpha = 0.1f;                 // EMA weight of the newest sample
  std::size_t fine_tune_epochs = 0;

  void validate() const;
};

/// Number of channels selected for shrinking in a layer of `channels`
/// outputs, clamped so that at least one channel survives.
std::size_t shrink_count(const ShrinkConfig& cfg, std::size_t channels);

/// Running salience of one layer and the selection derived from it.
struct SalienceState {
  std::vector<float> running;             // s-bar, one entry per output channel
  float alpha = 0.1f;
  std::size_t k = 0;
  std::vector<std::size_t> last_selection;

  /// s-bar starts at 0.5, the generator output under the zero fc2-bias init.
  static SalienceState init(std::size_t channels, float alpha, std::size_t k);
  std::size_t channels() const { return running.size(); }
};

/// s-bar <- (1 - alpha) * s-bar + alpha * mean_n s[n, :]
///
/// Results below the smallest normal float are flushed to zero so that a
/// channel whose salience stays at zero reaches an exactly-zero running value
/// instead of stalling on a denormal. Only valid in training mode.
void ema_update(SalienceState& state, const Tensor& s_batch, Mode mode);

/// The K channels with the smallest s-bar (stable: ties go to the lower
/// index). Stored in state.last_selection.
const std::vector<std::size_t>& select_topk(SalienceState& state);

/// Mean over the batch of the summed salience at the selected channels.
/// The gradient is 1/N at selected coordinates and 0 elsewhere.
Tensor shrink_loss(const Tensor& s, std::span<const std::size_t> selection);

/// Per-row variant: selection[n] lists the channels for sample n.
Tensor shrink_loss_per_sample(const Tensor& s,
                              const std::vector<std::vector<std::size_t>>& selection);

/// lambda_base * (min(epoch, t_max) / t_max)^2
float lambda_at(const ShrinkConfig& cfg, std::size_t epoch);

/// task + lambda * sum(shrink_losses)
Tensor hybrid_objective(const Tensor& task_loss, std::span<const Tensor> shrink_losses, float lambda);

}  // namespace pcs
