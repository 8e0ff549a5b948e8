#pragma once

#include <cstddef>

namespace pcs::kernels {

/// Dot product with eight fixed accumulation lanes. The lane layout pins the
/// summation order, so the result is reproducible and still vectorises
/// without reassociation flags.
inline float dot(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  float s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline float sum(const float* a, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j];
  }
  float s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i];
  return s;
}

/// y[i] += alpha * x[i]
inline void axpy(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

struct ConvShape {
  std::size_t channels, height, width;
  std::size_t kernel, stride, padding;
  std::size_t out_height, out_width;

  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t positions() const { return out_height * out_width; }
};

/// Unrolls one sample [C,H,W] into col[C*K*K, Ho*Wo].
void im2col(const float* x, const ConvShape& s, float* col);

/// Adjoint of im2col: accumulates col[C*K*K, Ho*Wo] into dx[C,H,W].
void col2im_add(const float* col, const ConvShape& s, float* dx);

}  // namespace pcs::kernels
