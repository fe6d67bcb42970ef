#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "nextscale/tensor.hpp"

namespace nextscale {

enum class InterpMode { kNearest, kBilinear, kArea };

namespace kernels {

// Per-output-index source taps along one axis: (source index, weight).
template <typename T>
using AxisTaps = std::vector<std::vector<std::pair<int64_t, T>>>;

template <typename T>
AxisTaps<T> interp_axis(int64_t in, int64_t out, InterpMode mode) {
  AxisTaps<T> taps(static_cast<size_t>(out));
  for (int64_t i = 0; i < out; ++i) {
    auto& t = taps[static_cast<size_t>(i)];
    switch (mode) {
      case InterpMode::kNearest: {
        int64_t src = ((2 * i + 1) * in) / (2 * out);
        if (src > in - 1) src = in - 1;
        t.emplace_back(src, T(1));
        break;
      }
      case InterpMode::kBilinear: {
        // align_corners = false; edges clamp. A 1-wide source broadcasts.
        const double src = (static_cast<double>(i) + 0.5) *
                               static_cast<double>(in) /
                               static_cast<double>(out) -
                           0.5;
        const double f = std::floor(src);
        const int64_t i0 = std::clamp<int64_t>(static_cast<int64_t>(f), 0, in - 1);
        const int64_t i1 = std::clamp<int64_t>(static_cast<int64_t>(f) + 1, 0, in - 1);
        const T w1 = static_cast<T>(src - f);
        const T w0 = T(1) - w1;
        if (i0 == i1) {
          t.emplace_back(i0, T(1));
        } else {
          t.emplace_back(i0, w0);
          t.emplace_back(i1, w1);
        }
        break;
      }
      case InterpMode::kArea: {
        // adaptive averaging boxes; exact box mean for integer ratios
        const int64_t s = (i * in) / out;
        const int64_t e = ((i + 1) * in + out - 1) / out;
        const T w = T(1) / static_cast<T>(e - s);
        for (int64_t k = s; k < e; ++k) t.emplace_back(k, w);
        break;
      }
    }
  }
  return taps;
}

template <typename T>
void interp_plane_forward(const T* src, int64_t h, int64_t w, T* dst,
                          const AxisTaps<T>& rows, const AxisTaps<T>& cols) {
  const int64_t oh = static_cast<int64_t>(rows.size());
  const int64_t ow = static_cast<int64_t>(cols.size());
  (void)h;
  for (int64_t i = 0; i < oh; ++i) {
    for (int64_t j = 0; j < ow; ++j) {
      T acc = 0;
      for (const auto& [si, wi] : rows[static_cast<size_t>(i)]) {
        for (const auto& [sj, wj] : cols[static_cast<size_t>(j)]) {
          acc += wi * wj * src[si * w + sj];
        }
      }
      dst[i * ow + j] = acc;
    }
  }
}

template <typename T>
void interp_plane_backward(T* src_grad, int64_t h, int64_t w, const T* dst_grad,
                           const AxisTaps<T>& rows, const AxisTaps<T>& cols) {
  const int64_t oh = static_cast<int64_t>(rows.size());
  const int64_t ow = static_cast<int64_t>(cols.size());
  (void)h;
  for (int64_t i = 0; i < oh; ++i) {
    for (int64_t j = 0; j < ow; ++j) {
      const T go = dst_grad[i * ow + j];
      for (const auto& [si, wi] : rows[static_cast<size_t>(i)]) {
        for (const auto& [sj, wj] : cols[static_cast<size_t>(j)]) {
          src_grad[si * w + sj] += wi * wj * go;
        }
      }
    }
  }
}

// Resize every channel plane of a (C,H,W) block.
template <typename T>
void interp_chw(const T* src, int64_t c, int64_t h, int64_t w, T* dst,
                int64_t oh, int64_t ow, InterpMode mode) {
  const auto rows = interp_axis<T>(h, oh, mode);
  const auto cols = interp_axis<T>(w, ow, mode);
  for (int64_t ch = 0; ch < c; ++ch) {
    interp_plane_forward(src + ch * h * w, h, w, dst + ch * oh * ow, rows, cols);
  }
}

// 3x3 convolution patch extraction, zero padding 1.
// col layout: (cin*9) x (oh*ow), row index = c*9 + ky*3 + kx.
template <typename T>
void im2col3x3(const T* src, int64_t cin, int64_t h, int64_t w, int64_t stride,
               T* col) {
  const int64_t oh = (h + 2 - 3) / stride + 1;
  const int64_t ow = (w + 2 - 3) / stride + 1;
  const int64_t ncols = oh * ow;
  for (int64_t c = 0; c < cin; ++c) {
    for (int64_t ky = 0; ky < 3; ++ky) {
      for (int64_t kx = 0; kx < 3; ++kx) {
        T* out_row = col + (c * 9 + ky * 3 + kx) * ncols;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * stride + ky - 1;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox * stride + kx - 1;
            out_row[oy * ow + ox] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w) ? src[c * h * w + iy * w + ix]
                                                         : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im3x3(const T* col, int64_t cin, int64_t h, int64_t w, int64_t stride,
               T* src_grad) {
  const int64_t oh = (h + 2 - 3) / stride + 1;
  const int64_t ow = (w + 2 - 3) / stride + 1;
  const int64_t ncols = oh * ow;
  for (int64_t c = 0; c < cin; ++c) {
    for (int64_t ky = 0; ky < 3; ++ky) {
      for (int64_t kx = 0; kx < 3; ++kx) {
        const T* in_row = col + (c * 9 + ky * 3 + kx) * ncols;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= w) continue;
            src_grad[c * h * w + iy * w + ix] += in_row[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace kernels
}  // namespace nextscale
