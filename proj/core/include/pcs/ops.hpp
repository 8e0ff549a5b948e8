#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pcs/tensor.hpp"

// Differentiable primitives. All reductions run in a fixed order so that
// repeated forward passes are bit-identical.
namespace pcs::ops {

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Output extent of a strided, padded window; throws ConfigError when the
/// window does not tile the padded input exactly.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t padding);

/// Cross-correlation x[N,Cin,H,W] * w[Cout,Cin,K,K] + b[Cout].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Conv2dGeometry geometry);

/// x[N,Fin] w[Fout,Fin]^T + b[Fout].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(const Tensor& x);

/// clamp((x + 3) / 6, 0, 1); gradient 1/6 strictly inside (-3, 3), else 0.
Tensor hard_sigmoid(const Tensor& x);

/// Spatial mean per channel: [N,C,H,W] -> [N,C].
Tensor gap(const Tensor& x);

/// Mean over rows of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);

/// Sum of all entries, returned as a [1] tensor.
Tensor sum(const Tensor& x);

/// Per-(sample, channel) scaling: out[n,c,:,:] = x[n,c,:,:] * s[n,c].
Tensor channel_scale(const Tensor& x, const Tensor& s);

/// Multiplies every row of s[N,C] by a constant per-column factor.
Tensor column_mul(const Tensor& s, std::span<const float> factors);

/// Places channel c of x[N,C',H,W] at position positions[c] of a zero
/// tensor with `width` channels.
Tensor scatter_channels(const Tensor& x, std::span<const std::size_t> positions,
                        std::size_t width);

struct BatchNormParams {
  float eps = 1e-5f;
  float momentum = 0.1f;
};

/// Batch normalisation over (N,H,W) per channel. In training mode batch
/// statistics are used and the running buffers are updated in place
/// (unbiased variance); otherwise the running buffers are used.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::span<float> running_mean, std::span<float> running_var,
                  bool training, BatchNormParams params);

}  // namespace pcs::ops
