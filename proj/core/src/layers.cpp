#include "pcs/layers.hpp"

#include <cmath>

#include "pcs/errors.hpp"

namespace pcs {

std::string to_string(Activation act) { return act == Activation::relu ? "relu" : "none"; }

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "none") return Activation::none;
  throw ConfigError("unknown activation '" + name + "'");
}

BatchNorm BatchNorm::identity(std::size_t channels) {
  BatchNorm bn;
  bn.gamma = Tensor(Shape{channels}, 1.0f);
  bn.beta = Tensor(Shape{channels}, 0.0f);
  bn.running_mean = Tensor(Shape{channels}, 0.0f);
  bn.running_var = Tensor(Shape{channels}, 1.0f);
  bn.gamma.set_requires_grad(true);
  bn.beta.set_requires_grad(true);
  return bn;
}

Linear Linear::init(std::size_t in, std::size_t out, std::mt19937& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  std::vector<float> w(out * in), b(out);
  for (auto& v : w) v = dist(rng);
  for (auto& v : b) v = dist(rng);
  Linear layer{Tensor(Shape{out, in}, std::move(w)), Tensor(Shape{out}, std::move(b))};
  layer.weight.set_requires_grad(true);
  layer.bias.set_requires_grad(true);
  return layer;
}

Tensor linear_forward(const Linear& layer, const Tensor& x) {
  return ops::linear(x, layer.weight, layer.bias);
}

ConvBlock ConvBlock::init(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                          std::size_t stride, std::size_t padding, bool with_bn, Activation act,
                          std::mt19937& rng) {
  if (in_channels == 0 || out_channels == 0 || kernel == 0) {
    throw ConfigError("conv block: channel counts and kernel must be positive");
  }
  const float fan_in = static_cast<float>(in_channels * kernel * kernel);
  const float bound = std::sqrt(6.0f / fan_in);
  std::uniform_real_distribution<float> dist(-bound, bound);
  std::vector<float> w(out_channels * in_channels * kernel * kernel);
  for (auto& v : w) v = dist(rng);
  ConvBlock block;
  block.weight = Tensor(Shape{out_channels, in_channels, kernel, kernel}, std::move(w));
  block.bias = Tensor(Shape{out_channels}, 0.0f);
  block.weight.set_requires_grad(true);
  block.bias.set_requires_grad(true);
  if (with_bn) block.bn = BatchNorm::identity(out_channels);
  block.activation = act;
  block.stride = stride;
  block.padding = padding;
  return block;
}

std::vector<Tensor> parameters(const ConvBlock& block) {
  std::vector<Tensor> params{block.weight, block.bias};
  if (block.bn) {
    params.push_back(block.bn->gamma);
    params.push_back(block.bn->beta);
  }
  return params;
}

Tensor conv_block_forward(ConvBlock& block, const Tensor& x, Mode mode) {
  Tensor y = ops::conv2d(x, block.weight, block.bias, {block.stride, block.padding});
  if (block.bn) {
    auto& bn = *block.bn;
    y = ops::batch_norm(y, bn.gamma, bn.beta, bn.running_mean.mutable_data(),
                        bn.running_var.mutable_data(), mode == Mode::train, {bn.eps, bn.momentum});
  }
  if (block.activation == Activation::relu) y = ops::relu(y);
  return y;
}

ConvBlock fold_batchnorm(const ConvBlock& block) {
  if (!block.bn) throw ConfigError("fold_batchnorm: block has no batch norm");
  const auto& bn = *block.bn;
  const std::size_t cout = block.out_channels();
  const std::size_t filter = block.weight.numel() / cout;
  std::vector<float> w(block.weight.data().begin(), block.weight.data().end());
  std::vector<float> b(cout);
  auto gamma = bn.gamma.data(), beta = bn.beta.data();
  auto mean = bn.running_mean.data(), var = bn.running_var.data();
  auto bias = block.bias.data();
  for (std::size_t c = 0; c < cout; ++c) {
    const float factor = gamma[c] / std::sqrt(var[c] + bn.eps);
    for (std::size_t i = 0; i < filter; ++i) w[c * filter + i] *= factor;
    b[c] = (bias[c] - mean[c]) * factor + beta[c];
  }
  ConvBlock folded;
  folded.weight = Tensor(block.weight.shape(), std::move(w));
  folded.bias = Tensor(Shape{cout}, std::move(b));
  folded.activation = block.activation;
  folded.stride = block.stride;
  folded.padding = block.padding;
  return folded;
}

Tensor residual_add(const Tensor& a, const Tensor& b) { return ops::add(a, b); }

}  // namespace pcs
