#pragma once

// Straight-line reference implementation of the multi-scale residual coding
// loop, written directly from the definitions (no shared kernels). Used as
// the independent oracle by the tokenizer tests and the acceptance gate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "nextscale/schedule.hpp"

namespace refcode {

inline std::vector<double> area_down(const std::vector<double>& src, int64_t c,
                                     int64_t ih, int64_t iw, int64_t oh,
                                     int64_t ow) {
  std::vector<double> dst(static_cast<size_t>(c * oh * ow), 0.0);
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t y = 0; y < oh; ++y) {
      const int64_t ys = (y * ih) / oh;
      const int64_t ye = ((y + 1) * ih + oh - 1) / oh;
      for (int64_t x = 0; x < ow; ++x) {
        const int64_t xs = (x * iw) / ow;
        const int64_t xe = ((x + 1) * iw + ow - 1) / ow;
        double acc = 0.0;
        for (int64_t sy = ys; sy < ye; ++sy) {
          for (int64_t sx = xs; sx < xe; ++sx) {
            acc += src[(ch * ih + sy) * iw + sx];
          }
        }
        dst[(ch * oh + y) * ow + x] =
            acc / static_cast<double>((ye - ys) * (xe - xs));
      }
    }
  }
  return dst;
}

inline std::vector<double> bilinear_up(const std::vector<double>& src,
                                       int64_t c, int64_t ih, int64_t iw,
                                       int64_t oh, int64_t ow) {
  auto sample = [&](int64_t ch, int64_t y, int64_t x) {
    return src[(ch * ih + y) * iw + x];
  };
  std::vector<double> dst(static_cast<size_t>(c * oh * ow), 0.0);
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t y = 0; y < oh; ++y) {
      const double sy = (y + 0.5) * static_cast<double>(ih) / oh - 0.5;
      int64_t y0 = static_cast<int64_t>(std::floor(sy));
      const double wy1 = sy - std::floor(sy);
      int64_t y1 = y0 + 1;
      y0 = std::max<int64_t>(0, std::min(y0, ih - 1));
      y1 = std::max<int64_t>(0, std::min(y1, ih - 1));
      for (int64_t x = 0; x < ow; ++x) {
        const double sx = (x + 0.5) * static_cast<double>(iw) / ow - 0.5;
        int64_t x0 = static_cast<int64_t>(std::floor(sx));
        const double wx1 = sx - std::floor(sx);
        int64_t x1 = x0 + 1;
        x0 = std::max<int64_t>(0, std::min(x0, iw - 1));
        x1 = std::max<int64_t>(0, std::min(x1, iw - 1));
        const double top = sample(ch, y0, x0) * (1.0 - wx1) +
                           sample(ch, y0, x1) * (x0 == x1 ? 0.0 : wx1);
        const double bot = sample(ch, y1, x0) * (1.0 - wx1) +
                           sample(ch, y1, x1) * (x0 == x1 ? 0.0 : wx1);
        double v;
        if (x0 == x1) {
          v = sample(ch, y0, x0) * (y0 == y1 ? 1.0 : 1.0 - wy1) +
              sample(ch, y1, x0) * (y0 == y1 ? 0.0 : wy1);
        } else if (y0 == y1) {
          v = top;
        } else {
          v = top * (1.0 - wy1) + bot * wy1;
        }
        dst[(ch * oh + y) * ow + x] = v;
      }
    }
  }
  return dst;
}

inline std::vector<std::vector<int64_t>> encode(
    const std::vector<double>& f, int64_t c, int64_t fh, int64_t fw,
    const nextscale::ScaleSchedule& schedule,
    const std::vector<double>& codebook, int64_t vocab) {
  std::vector<double> residual = f;
  std::vector<std::vector<int64_t>> maps;
  for (const auto& [h, w] : schedule.sizes) {
    const std::vector<double> down = area_down(residual, c, fh, fw, h, w);
    std::vector<int64_t> tokens(static_cast<size_t>(h * w));
    std::vector<double> small(static_cast<size_t>(c * h * w));
    for (int64_t p = 0; p < h * w; ++p) {
      int64_t best = 0;
      double best_dist = 0.0;
      for (int64_t v = 0; v < vocab; ++v) {
        double dist = 0.0;
        for (int64_t ch = 0; ch < c; ++ch) {
          const double d = codebook[v * c + ch] - down[ch * h * w + p];
          dist += d * d;
        }
        if (v == 0 || dist < best_dist) {
          best = v;
          best_dist = dist;
        }
      }
      tokens[static_cast<size_t>(p)] = best;
      for (int64_t ch = 0; ch < c; ++ch) {
        small[ch * h * w + p] = codebook[best * c + ch];
      }
    }
    const std::vector<double> up = bilinear_up(small, c, h, w, fh, fw);
    for (size_t i = 0; i < residual.size(); ++i) residual[i] -= up[i];
    maps.push_back(std::move(tokens));
  }
  return maps;
}

}  // namespace refcode
