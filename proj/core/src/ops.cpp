#include "pcs/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kernels.hpp"
#include "pcs/errors.hpp"

namespace pcs::ops {

namespace {

void require_ndim(const Tensor& t, std::size_t ndim, const char* op, const char* name) {
  if (!t.defined() || t.ndim() != ndim) {
    throw ShapeError(std::string(op) + ": " + name + " must be " + std::to_string(ndim) +
                     "-D, got " + (t.defined() ? shape_str(t.shape()) : "<undefined>"));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
  if (stride < 1) throw ConfigError("conv: stride must be >= 1");
  const std::size_t padded = in + 2 * padding;
  if (padded < kernel) {
    throw ConfigError("conv: kernel " + std::to_string(kernel) + " larger than padded input " +
                      std::to_string(padded));
  }
  if ((padded - kernel) % stride != 0) {
    throw ConfigError("conv: (" + std::to_string(in) + " + 2*" + std::to_string(padding) + " - " +
                      std::to_string(kernel) + ") is not divisible by stride " +
                      std::to_string(stride));
  }
  return (padded - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Conv2dGeometry geometry) {
  require_ndim(x, 4, "conv2d", "x");
  require_ndim(w, 4, "conv2d", "w");
  require_ndim(b, 1, "conv2d", "b");
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin) {
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels but weight expects " +
                     std::to_string(w.dim(1)) + " (w " + shape_str(w.shape()) + ")");
  }
  if (w.dim(3) != k) throw ShapeError("conv2d: kernel must be square, got " + shape_str(w.shape()));
  if (b.dim(0) != cout) {
    throw ShapeError("conv2d: bias has " + std::to_string(b.dim(0)) + " entries, expected " +
                     std::to_string(cout));
  }
  kernels::ConvShape cs{cin, h, wd, k, geometry.stride, geometry.padding, 0, 0};
  cs.out_height = conv_out_extent(h, k, geometry.stride, geometry.padding);
  cs.out_width = conv_out_extent(wd, k, geometry.stride, geometry.padding);
  const std::size_t patch = cs.patch(), positions = cs.positions();

  std::vector<float> out(n * cout * positions);
  std::vector<float> col(patch * positions);
  const float* xd = x.data().data();
  const float* wdat = w.data().data();
  const float* bd = b.data().data();
  for (std::size_t s = 0; s < n; ++s) {
    kernels::im2col(xd + s * cin * h * wd, cs, col.data());
    float* o = out.data() + s * cout * positions;
    for (std::size_t co = 0; co < cout; ++co) {
      float* orow = o + co * positions;
      std::fill(orow, orow + positions, bd[co]);
      const float* wrow = wdat + co * patch;
      for (std::size_t kk = 0; kk < patch; ++kk) {
        kernels::axpy(wrow[kk], col.data() + kk * positions, orow, positions);
      }
    }
  }

  Tensor xc = x, wc = w, bc = b;
  return make_result(
      Shape{n, cout, cs.out_height, cs.out_width}, std::move(out), "conv2d", {x, w, b},
      [xc, wc, bc, cs, n, cout](std::span<const float> g) mutable {
        const std::size_t patch = cs.patch(), positions = cs.positions();
        const std::size_t in_sz = cs.channels * cs.height * cs.width;
        float* gx = xc.requires_grad() ? xc.grad_buffer().data() : nullptr;
        float* gw = wc.requires_grad() ? wc.grad_buffer().data() : nullptr;
        float* gb = bc.requires_grad() ? bc.grad_buffer().data() : nullptr;
        std::vector<float> col(patch * positions);
        std::vector<float> dcol(gx ? patch * positions : 0);
        const float* wdat = wc.data().data();
        for (std::size_t s = 0; s < n; ++s) {
          const float* gs = g.data() + s * cout * positions;
          if (gb) {
            for (std::size_t co = 0; co < cout; ++co) gb[co] += kernels::sum(gs + co * positions, positions);
          }
          if (gw) {
            kernels::im2col(xc.data().data() + s * in_sz, cs, col.data());
            for (std::size_t co = 0; co < cout; ++co) {
              for (std::size_t kk = 0; kk < patch; ++kk) {
                gw[co * patch + kk] += kernels::dot(gs + co * positions, col.data() + kk * positions, positions);
              }
            }
          }
          if (gx) {
            std::fill(dcol.begin(), dcol.end(), 0.0f);
            for (std::size_t co = 0; co < cout; ++co) {
              const float* wrow = wdat + co * patch;
              for (std::size_t kk = 0; kk < patch; ++kk) {
                kernels::axpy(wrow[kk], gs + co * positions, dcol.data() + kk * positions, positions);
              }
            }
            kernels::col2im_add(dcol.data(), cs, gx + s * in_sz);
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_ndim(x, 2, "linear", "x");
  require_ndim(w, 2, "linear", "w");
  require_ndim(b, 1, "linear", "b");
  const std::size_t n = x.dim(0), fin = x.dim(1), fout = w.dim(0);
  if (w.dim(1) != fin) {
    throw ShapeError("linear: input has " + std::to_string(fin) + " features but weight expects " +
                     std::to_string(w.dim(1)));
  }
  if (b.dim(0) != fout) {
    throw ShapeError("linear: bias has " + std::to_string(b.dim(0)) + " entries, expected " +
                     std::to_string(fout));
  }
  std::vector<float> out(n * fout);
  const float* xd = x.data().data();
  const float* wd = w.data().data();
  const float* bd = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < fout; ++o) {
      out[i * fout + o] = bd[o] + kernels::dot(xd + i * fin, wd + o * fin, fin);
    }
  }
  Tensor xc = x, wc = w, bc = b;
  return make_result(Shape{n, fout}, std::move(out), "linear", {x, w, b},
                     [xc, wc, bc, n, fin, fout](std::span<const float> g) mutable {
                       const float* xd = xc.data().data();
                       const float* wd = wc.data().data();
                       if (xc.requires_grad()) {
                         float* gx = xc.grad_buffer().data();
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t o = 0; o < fout; ++o) {
                             kernels::axpy(g[i * fout + o], wd + o * fin, gx + i * fin, fin);
                           }
                         }
                       }
                       if (wc.requires_grad()) {
                         float* gw = wc.grad_buffer().data();
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t o = 0; o < fout; ++o) {
                             kernels::axpy(g[i * fout + o], xd + i * fin, gw + o * fin, fin);
                           }
                         }
                       }
                       if (bc.requires_grad()) {
                         float* gb = bc.grad_buffer().data();
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t o = 0; o < fout; ++o) gb[o] += g[i * fout + o];
                         }
                       }
                     });
}

Tensor relu(const Tensor& x) {
  std::vector<float> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
  Tensor xc = x;
  return make_result(x.shape(), std::move(out), "relu", {x}, [xc](std::span<const float> g) mutable {
    auto xd = xc.data();
    auto gx = xc.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xd[i] > 0.0f) gx[i] += g[i];
    }
  });
}

Tensor hard_sigmoid(const Tensor& x) {
  std::vector<float> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp((xd[i] + 3.0f) / 6.0f, 0.0f, 1.0f);
  }
  Tensor xc = x;
  return make_result(x.shape(), std::move(out), "hard_sigmoid", {x},
                     [xc](std::span<const float> g) mutable {
                       auto xd = xc.data();
                       auto gx = xc.grad_buffer();
                       for (std::size_t i = 0; i < gx.size(); ++i) {
                         if (xd[i] > -3.0f && xd[i] < 3.0f) gx[i] += g[i] / 6.0f;
                       }
                     });
}

Tensor gap(const Tensor& x) {
  require_ndim(x, 4, "gap", "x");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<float> out(n * c);
  const float* xd = x.data().data();
  const float inv = 1.0f / static_cast<float>(hw);
  for (std::size_t i = 0; i < n * c; ++i) out[i] = kernels::sum(xd + i * hw, hw) * inv;
  Tensor xc = x;
  return make_result(Shape{n, c}, std::move(out), "gap", {x},
                     [xc, n, c, hw, inv](std::span<const float> g) mutable {
                       float* gx = xc.grad_buffer().data();
                       for (std::size_t i = 0; i < n * c; ++i) {
                         const float v = g[i] * inv;
                         for (std::size_t p = 0; p < hw; ++p) gx[i * hw + p] += v;
                       }
                     });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_ndim(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  const float* ld = logits.data().data();
  std::vector<float> probs(n * classes);
  float total = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ConfigError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                        std::to_string(classes) + ")");
    }
    const float* row = ld + i * classes;
    const float m = *std::max_element(row, row + classes);
    float z = 0.0f;
    for (std::size_t k = 0; k < classes; ++k) {
      probs[i * classes + k] = std::exp(row[k] - m);
      z += probs[i * classes + k];
    }
    for (std::size_t k = 0; k < classes; ++k) probs[i * classes + k] /= z;
    total += -(row[label] - m - std::log(z));
  }
  const float loss = total / static_cast<float>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  Tensor lc = logits;
  return make_result(Shape{1}, std::vector<float>{loss}, "softmax_cross_entropy", {logits},
                     [lc, probs = std::move(probs), lab = std::move(lab), n,
                      classes](std::span<const float> g) mutable {
                       float* gl = lc.grad_buffer().data();
                       const float scale = g[0] / static_cast<float>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t k = 0; k < classes; ++k) {
                           const float target = static_cast<int>(k) == lab[i] ? 1.0f : 0.0f;
                           gl[i * classes + k] += (probs[i * classes + k] - target) * scale;
                         }
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  Tensor ac = a, bc = b;
  return make_result(a.shape(), std::move(out), "add", {a, b},
                     [ac, bc](std::span<const float> g) mutable {
                       if (ac.requires_grad()) {
                         auto ga = ac.grad_buffer();
                         for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                       }
                       if (bc.requires_grad()) {
                         auto gb = bc.grad_buffer();
                         for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i];
                       }
                     });
}

Tensor scale(const Tensor& x, float factor) {
  std::vector<float> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * factor;
  Tensor xc = x;
  return make_result(x.shape(), std::move(out), "scale", {x},
                     [xc, factor](std::span<const float> g) mutable {
                       auto gx = xc.grad_buffer();
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * factor;
                     });
}

Tensor sum(const Tensor& x) {
  const float total = kernels::sum(x.data().data(), x.numel());
  Tensor xc = x;
  return make_result(Shape{1}, std::vector<float>{total}, "sum", {x},
                     [xc](std::span<const float> g) mutable {
                       auto gx = xc.grad_buffer();
                       for (auto& v : gx) v += g[0];
                     });
}

Tensor channel_scale(const Tensor& x, const Tensor& s) {
  require_ndim(x, 4, "channel_scale", "x");
  require_ndim(s, 2, "channel_scale", "s");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (s.dim(0) != n || s.dim(1) != c) {
    throw ShapeError("channel_scale: scales " + shape_str(s.shape()) + " do not match features " +
                     shape_str(x.shape()));
  }
  std::vector<float> out(x.numel());
  const float* xd = x.data().data();
  const float* sd = s.data().data();
  for (std::size_t i = 0; i < n * c; ++i) {
    for (std::size_t p = 0; p < hw; ++p) out[i * hw + p] = xd[i * hw + p] * sd[i];
  }
  Tensor xc = x, sc = s;
  return make_result(x.shape(), std::move(out), "channel_scale", {x, s},
                     [xc, sc, n, c, hw](std::span<const float> g) mutable {
                       const float* xd = xc.data().data();
                       const float* sd = sc.data().data();
                       if (xc.requires_grad()) {
                         float* gx = xc.grad_buffer().data();
                         for (std::size_t i = 0; i < n * c; ++i) {
                           for (std::size_t p = 0; p < hw; ++p) gx[i * hw + p] += g[i * hw + p] * sd[i];
                         }
                       }
                       if (sc.requires_grad()) {
                         float* gs = sc.grad_buffer().data();
                         for (std::size_t i = 0; i < n * c; ++i) {
                           gs[i] += kernels::dot(g.data() + i * hw, xd + i * hw, hw);
                         }
                       }
                     });
}

Tensor column_mul(const Tensor& s, std::span<const float> factors) {
  require_ndim(s, 2, "column_mul", "s");
  const std::size_t n = s.dim(0), c = s.dim(1);
  if (factors.size() != c) {
    throw ShapeError("column_mul: " + std::to_string(factors.size()) + " factors for " +
                     std::to_string(c) + " columns");
  }
  std::vector<float> f(factors.begin(), factors.end());
  std::vector<float> out(n * c);
  auto sd = s.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = sd[i * c + j] * f[j];
  }
  Tensor sc = s;
  return make_result(s.shape(), std::move(out), "column_mul", {s},
                     [sc, f = std::move(f), n, c](std::span<const float> g) mutable {
                       auto gs = sc.grad_buffer();
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < c; ++j) gs[i * c + j] += g[i * c + j] * f[j];
                       }
                     });
}

Tensor scatter_channels(const Tensor& x, std::span<const std::size_t> positions, std::size_t width) {
  require_ndim(x, 4, "scatter_channels", "x");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (positions.size() != c) {
    throw ShapeError("scatter_channels: " + std::to_string(positions.size()) + " positions for " +
                     std::to_string(c) + " channels");
  }
  for (auto p : positions) {
    if (p >= width) throw ShapeError("scatter_channels: position " + std::to_string(p) + " >= width " + std::to_string(width));
  }
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  std::vector<float> out(n * width * hw, 0.0f);
  const float* xd = x.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::copy_n(xd + (i * c + ch) * hw, hw, out.data() + (i * width + pos[ch]) * hw);
    }
  }
  Tensor xc = x;
  return make_result(Shape{n, width, x.dim(2), x.dim(3)}, std::move(out), "scatter_channels", {x},
                     [xc, pos = std::move(pos), n, c, hw, width](std::span<const float> g) mutable {
                       float* gx = xc.grad_buffer().data();
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           const float* src = g.data() + (i * width + pos[ch]) * hw;
                           float* dst = gx + (i * c + ch) * hw;
                           for (std::size_t p = 0; p < hw; ++p) dst[p] += src[p];
                         }
                       }
                     });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::span<float> running_mean, std::span<float> running_var, bool training,
                  BatchNormParams params) {
  require_ndim(x, 4, "batch_norm", "x");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c || running_mean.size() != c || running_var.size() != c) {
    throw ShapeError("batch_norm: parameters do not match " + std::to_string(c) + " channels");
  }
  const std::size_t count = n * hw;
  const float* xd = x.data().data();
  const float* gd = gamma.data().data();
  const float* bd = beta.data().data();
  std::vector<float> xhat(x.numel());
  std::vector<float> inv_std(c);
  std::vector<float> out(x.numel());

  for (std::size_t ch = 0; ch < c; ++ch) {
    float mean, var;
    if (training) {
      float s = 0.0f;
      for (std::size_t i = 0; i < n; ++i) s += kernels::sum(xd + (i * c + ch) * hw, hw);
      mean = s / static_cast<float>(count);
      float sq = 0.0f;
      for (std::size_t i = 0; i < n; ++i) {
        const float* row = xd + (i * c + ch) * hw;
        for (std::size_t p = 0; p < hw; ++p) sq += (row[p] - mean) * (row[p] - mean);
      }
      var = sq / static_cast<float>(count);
      const float unbiased = count > 1 ? sq / static_cast<float>(count - 1) : var;
      running_mean[ch] = (1.0f - params.momentum) * running_mean[ch] + params.momentum * mean;
      running_var[ch] = (1.0f - params.momentum) * running_var[ch] + params.momentum * unbiased;
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    inv_std[ch] = 1.0f / std::sqrt(var + params.eps);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        xhat[off + p] = (xd[off + p] - mean) * inv_std[ch];
        out[off + p] = gd[ch] * xhat[off + p] + bd[ch];
      }
    }
  }

  Tensor xc = x, gc = gamma, bc = beta;
  return make_result(
      x.shape(), std::move(out), "batch_norm", {x, gamma, beta},
      [xc, gc, bc, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw, count,
       training](std::span<const float> g) mutable {
        const float* gd = gc.data().data();
        float* gg = gc.requires_grad() ? gc.grad_buffer().data() : nullptr;
        float* gb = bc.requires_grad() ? bc.grad_buffer().data() : nullptr;
        float* gx = xc.requires_grad() ? xc.grad_buffer().data() : nullptr;
        for (std::size_t ch = 0; ch < c; ++ch) {
          float sum_g = 0.0f, sum_gx = 0.0f;
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t off = (i * c + ch) * hw;
            sum_g += kernels::sum(g.data() + off, hw);
            sum_gx += kernels::dot(g.data() + off, xhat.data() + off, hw);
          }
          if (gg) gg[ch] += sum_gx;
          if (gb) gb[ch] += sum_g;
          if (!gx) continue;
          const float m = static_cast<float>(count);
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t off = (i * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p) {
              if (training) {
                const float dxhat = g[off + p] * gd[ch];
                // sum(dxhat) = gamma * sum_g and sum(dxhat * xhat) = gamma * sum_gx.
                gx[off + p] += inv_std[ch] / m *
                               (m * dxhat - gd[ch] * sum_g - xhat[off + p] * gd[ch] * sum_gx);
              } else {
                gx[off + p] += g[off + p] * gd[ch] * inv_std[ch];
              }
            }
          }
        }
      });
}

}  // namespace pcs::ops
