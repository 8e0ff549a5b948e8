#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pcs/ops.hpp"
#include "pcs/tensor.hpp"

namespace pcs {

enum class Mode { train, eval };
enum class Activation { none, relu };

std::string to_string(Activation act);
Activation activation_from_string(const std::string& name);

struct BatchNorm {
  Tensor gamma;         // [C]
  Tensor beta;          // [C]
  Tensor running_mean;  // [C], not trained by SGD
  Tensor running_var;   // [C], not trained by SGD
  float eps = 1e-5f;
  float momentum = 0.1f;

  static BatchNorm identity(std::size_t channels);
  std::size_t channels() const { return gamma.numel(); }
};

struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  /// Uniform(-1/sqrt(in), 1/sqrt(in)) weights and bias.
  static Linear init(std::size_t in, std::size_t out, std::mt19937& rng);
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
};

Tensor linear_forward(const Linear& layer, const Tensor& x);

/// conv -> optional batch norm -> activation.
struct ConvBlock {
  Tensor weight;  // [Cout, Cin, K, K]
  Tensor bias;    // [Cout]
  std::optional<BatchNorm> bn;
  Activation activation = Activation::relu;
  std::size_t stride = 1;
  std::size_t padding = 0;

  /// Kaiming-uniform weights, zero bias, identity batch norm when requested.
  static ConvBlock init(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                        std::size_t stride, std::size_t padding, bool with_bn, Activation act,
                        std::mt19937& rng);

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t kernel() const { return weight.dim(2); }
};

/// Trainable tensors of a block (weight, bias, and BN affine parameters).
std::vector<Tensor> parameters(const ConvBlock& block);

Tensor conv_block_forward(ConvBlock& block, const Tensor& x, Mode mode);

/// Folds eval-mode batch norm into the convolution:
///   w' = w * gamma / sqrt(var + eps),  b' = (b - mean) * gamma / sqrt(var + eps) + beta
ConvBlock fold_batchnorm(const ConvBlock& block);

Tensor residual_add(const Tensor& a, const Tensor& b);

}  // namespace pcs
