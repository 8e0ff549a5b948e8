#include "pcs/salience.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pcs/errors.hpp"
#include "pcs/ops.hpp"

namespace pcs {

std::size_t SalienceGenerator::hidden_width(std::size_t in_channels, std::size_t reduction) {
  if (reduction == 0) throw ConfigError("salience generator: reduction ratio must be positive");
  return std::max(in_channels / reduction, kMinHidden);
}

SalienceGenerator SalienceGenerator::init(std::size_t in_channels, std::size_t out_channels,
                                          std::mt19937& rng, std::size_t reduction) {
  const std::size_t hidden = hidden_width(in_channels, reduction);
  SalienceGenerator gen;
  gen.reduction = reduction;
  gen.fc1 = Linear::init(in_channels, hidden, rng);
  gen.fc2 = Linear::init(hidden, out_channels, rng);
  std::fill(gen.fc2.bias.mutable_data().begin(), gen.fc2.bias.mutable_data().end(), 0.0f);
  return gen;
}

std::vector<Tensor> parameters(const SalienceGenerator& gen) {
  return {gen.fc1.weight, gen.fc1.bias, gen.fc2.weight, gen.fc2.bias};
}

Tensor salience_logits(const SalienceGenerator& gen, const Tensor& x) {
  if (x.ndim() != 4 || x.dim(1) != gen.in_channels()) {
    throw ShapeError("salience generator expects [N," + std::to_string(gen.in_channels()) +
                     ",H,W] input, got " + shape_str(x.shape()));
  }
  Tensor pooled = ops::gap(x);
  Tensor hidden = ops::relu(linear_forward(gen.fc1, pooled));
  return linear_forward(gen.fc2, hidden);
}

Tensor generate_salience(const SalienceGenerator& gen, const Tensor& x) {
  return ops::hard_sigmoid(salience_logits(gen, x));
}

Tensor reweigh(const Tensor& x, const Tensor& s) { return ops::channel_scale(x, s); }

Tensor truncate(const Tensor& s, float threshold) {
  if (threshold < 0.0f) throw ConfigError("truncate: threshold must be >= 0");
  std::vector<float> keep(s.numel());
  auto sd = s.data();
  std::vector<float> out(s.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    keep[i] = sd[i] < threshold ? 0.0f : 1.0f;
    out[i] = sd[i] * keep[i];
  }
  Tensor sc = s;
  return make_result(s.shape(), std::move(out), "truncate", {s},
                     [sc, keep = std::move(keep)](std::span<const float> g) mutable {
                       auto gs = sc.grad_buffer();
                       for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += g[i] * keep[i];
                     });
}

std::vector<std::size_t> lowest_indices(std::span<const float> values, std::size_t count) {
  if (count > values.size()) {
    throw ConfigError("lowest_indices: count " + std::to_string(count) + " exceeds " +
                      std::to_string(values.size()) + " values");
  }
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  idx.resize(count);
  return idx;
}

Tensor truncate_lowest(const Tensor& s, float fraction) {
  if (s.ndim() != 2) throw ShapeError("truncate_lowest: expects [N,C], got " + shape_str(s.shape()));
  if (fraction < 0.0f || fraction > 1.0f) throw ConfigError("truncate_lowest: fraction must be in [0,1]");
  const std::size_t n = s.dim(0), c = s.dim(1);
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<float>(c)));
  std::vector<float> keep(s.numel(), 1.0f);
  auto sd = s.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (auto j : lowest_indices(sd.subspan(i * c, c), count)) keep[i * c + j] = 0.0f;
  }
  std::vector<float> out(s.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sd[i] * keep[i];
  Tensor sc = s;
  return make_result(s.shape(), std::move(out), "truncate_lowest", {s},
                     [sc, keep = std::move(keep)](std::span<const float> g) mutable {
                       auto gs = sc.grad_buffer();
                       for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += g[i] * keep[i];
                     });
}

}  // namespace pcs
