#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "pcs/layers.hpp"
#include "pcs/tensor.hpp"

namespace pcs {

/// GAP -> FC -> ReLU -> FC -> hard sigmoid, mapping the input feature maps of
/// a convolution to one salience entry per output channel.
struct SalienceGenerator {
  static constexpr std::size_t kDefaultReduction = 4;
  static constexpr std::size_t kMinHidden = 4;

  Linear fc1;  // C_in -> hidden
  Linear fc2;  // hidden -> C_out
  std::size_t reduction = kDefaultReduction;

  /// fc weights use fan-in uniform init; the fc2 bias starts at zero so the
  /// initial salience sits near 0.5.
  static SalienceGenerator init(std::size_t in_channels, std::size_t out_channels,
                                std::mt19937& rng, std::size_t reduction = kDefaultReduction);

  static std::size_t hidden_width(std::size_t in_channels, std::size_t reduction);
  std::size_t in_channels() const { return fc1.in_features(); }
  std::size_t out_channels() const { return fc2.out_features(); }
};

std::vector<Tensor> parameters(const SalienceGenerator& gen);

/// [N,C_in,H,W] -> [N,C_out], every entry in [0, 1].
Tensor generate_salience(const SalienceGenerator& gen, const Tensor& x);

/// Pre-activation of the final hard sigmoid (fc2 output). Exposed for
/// diagnostics on saturated entries.
Tensor salience_logits(const SalienceGenerator& gen, const Tensor& x);

/// x'[n,c] = s[n,c] * x[n,c]
Tensor reweigh(const Tensor& x, const Tensor& s);

/// Entries below `threshold` become 0; survivors pass through with an
/// identity gradient, truncated entries get zero gradient.
Tensor truncate(const Tensor& s, float threshold);

/// Rank form: in every row of s[N,C], the floor(fraction * C) smallest
/// entries are zeroed (ties resolved towards the lower channel index).
Tensor truncate_lowest(const Tensor& s, float fraction);

/// Indices of the `count` smallest values, ascending by value and then by
/// index.
std::vector<std::size_t> lowest_indices(std::span<const float> values, std::size_t count);

}  // namespace pcs
