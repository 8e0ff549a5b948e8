#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "pcs/tensor.hpp"

namespace pcs::testing {

inline Tensor random_tensor(Shape shape, std::mt19937& rng, float lo = -2.0f, float hi = 2.0f) {
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t passed = 0;
  std::size_t skipped = 0;  // kink-adjacent coordinates
  double worst = 0.0;

  double pass_rate() const { return checked ? static_cast<double>(passed) / static_cast<double>(checked) : 1.0; }
};

/// Compares analytic gradients of sum(weights * f(inputs)) against central
/// differences with step eps. A coordinate counts as kink-adjacent, and is
/// skipped, when its one-sided differences disagree by more than 1e-2
/// relative: the perturbation then crosses a point where f is not
/// differentiable.
inline GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 std::vector<Tensor> inputs, std::mt19937& rng, float eps = 1e-3f,
                                 double tolerance = 1e-3) {
  Tensor probe = f(inputs);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<float> weights(probe.numel());
  for (auto& w : weights) w = dist(rng);

  auto scalar = [&](const std::vector<Tensor>& in) {
    NoGradGuard guard;
    Tensor out = f(in);
    double acc = 0.0;
    auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) acc += static_cast<double>(weights[i]) * d[i];
    return acc;
  };

  for (auto& t : inputs) t.clear_grad();
  Tensor out = f(inputs);
  Tensor outc = out;
  Tensor total = make_result(Shape{1}, std::vector<float>{0.0f}, "weighted_sum", {out},
                             [outc, weights](std::span<const float> g) mutable {
                               auto go = outc.grad_buffer();
                               for (std::size_t i = 0; i < go.size(); ++i) go[i] += g[0] * weights[i];
                             });
  backward(total);

  GradCheckResult result;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<float> analytic(t.numel(), 0.0f);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float x0 = data[i];
      const double f0 = scalar(inputs);
      data[i] = x0 + eps;
      const double fp = scalar(inputs);
      data[i] = x0 - eps;
      const double fm = scalar(inputs);
      data[i] = x0;
      const double forward = (fp - f0) / eps, backward_d = (f0 - fm) / eps;
      if (std::abs(forward - backward_d) > 1e-2 * std::max({std::abs(forward), std::abs(backward_d), 1.0})) {
        ++result.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
      result.worst = std::max(result.worst, err);
      ++result.checked;
      if (err <= tolerance) ++result.passed;
    }
  }
  return result;
}

}  // namespace pcs::testing
