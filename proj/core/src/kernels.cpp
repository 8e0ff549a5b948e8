#include "kernels.hpp"

#include <algorithm>

namespace pcs::kernels {

void im2col(const float* x, const ConvShape& s, float* col) {
  const std::size_t positions = s.positions();
  for (std::size_t c = 0; c < s.channels; ++c) {
    const float* plane = x + c * s.height * s.width;
    for (std::size_t ky = 0; ky < s.kernel; ++ky) {
      for (std::size_t kx = 0; kx < s.kernel; ++kx) {
        float* row = col + ((c * s.kernel + ky) * s.kernel + kx) * positions;
        for (std::size_t oy = 0; oy < s.out_height; ++oy) {
          float* dst = row + oy * s.out_width;
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) -
                                    static_cast<std::ptrdiff_t>(s.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.height)) {
            std::fill(dst, dst + s.out_width, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * s.width;
          for (std::size_t ox = 0; ox < s.out_width; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) -
                                      static_cast<std::ptrdiff_t>(s.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.width))
                          ? 0.0f
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvShape& s, float* dx) {
  const std::size_t positions = s.positions();
  for (std::size_t c = 0; c < s.channels; ++c) {
    float* plane = dx + c * s.height * s.width;
    for (std::size_t ky = 0; ky < s.kernel; ++ky) {
      for (std::size_t kx = 0; kx < s.kernel; ++kx) {
        const float* row = col + ((c * s.kernel + ky) * s.kernel + kx) * positions;
        for (std::size_t oy = 0; oy < s.out_height; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) -
                                    static_cast<std::ptrdiff_t>(s.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.height)) continue;
          float* dst = plane + static_cast<std::size_t>(iy) * s.width;
          const float* src = row + oy * s.out_width;
          for (std::size_t ox = 0; ox < s.out_width; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) -
                                      static_cast<std::ptrdiff_t>(s.padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(s.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace pcs::kernels
