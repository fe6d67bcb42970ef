#include "nextscale/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nextscale {

void write_ppm(const std::string& path, const Image& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(image.width) * 3);
  for (int64_t y = 0; y < image.height; ++y) {
    for (int64_t x = 0; x < image.width; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        row[static_cast<size_t>(x * 3 + c)] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string magic;
  in >> magic;
  if (magic != "P6") {
    throw std::runtime_error("'" + path + "' is not a binary PPM");
  }
  // header tokens may be separated by whitespace or comments
  auto next_int = [&]() -> int64_t {
    std::string token;
    while (in >> token) {
      if (token[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return std::stoll(token);
    }
    throw std::runtime_error("'" + path + "': truncated PPM header");
  };
  Image image;
  image.width = next_int();
  image.height = next_int();
  const int64_t maxval = next_int();
  if (maxval != 255) {
    throw std::runtime_error("'" + path + "': unsupported maxval " +
                             std::to_string(maxval));
  }
  in.get();  // single whitespace after header
  std::vector<unsigned char> raw(static_cast<size_t>(image.width) *
                                 static_cast<size_t>(image.height) * 3);
  if (!in.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(raw.size()))) {
    throw std::runtime_error("'" + path + "': truncated PPM payload");
  }
  image.pixels.resize(raw.size());
  for (int64_t y = 0; y < image.height; ++y) {
    for (int64_t x = 0; x < image.width; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        image.at(c, y, x) =
            static_cast<float>(raw[static_cast<size_t>((y * image.width + x) * 3 + c)]) /
            255.0f;
      }
    }
  }
  return image;
}

}  // namespace nextscale
