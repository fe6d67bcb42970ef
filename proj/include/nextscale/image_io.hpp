#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nextscale {

// RGB image, channel-major (3, height, width), values in [0,1].
struct Image {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<float> pixels;

  float& at(int64_t c, int64_t y, int64_t x) {
    return pixels[static_cast<size_t>((c * height + y) * width + x)];
  }
  float at(int64_t c, int64_t y, int64_t x) const {
    return pixels[static_cast<size_t>((c * height + y) * width + x)];
  }
};

// Binary PPM (P6, maxval 255). Values are clamped and rounded on write.
void write_ppm(const std::string& path, const Image& image);
Image read_ppm(const std::string& path);

}  // namespace nextscale
