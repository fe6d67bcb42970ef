#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nextscale/image_io.hpp"

namespace nextscale {

inline const std::array<std::string, 4>& color_names() {
  static const std::array<std::string, 4> names = {"red", "green", "blue",
                                                  "yellow"};
  return names;
}
inline const std::array<std::string, 2>& shape_names() {
  static const std::array<std::string, 2> names = {"square", "circle"};
  return names;
}
inline const std::array<std::string, 2>& background_names() {
  static const std::array<std::string, 2> names = {"black", "white"};
  return names;
}

// One captioned training image from the procedural renderer.
struct ShapeSample {
  uint64_t id = 0;
  Image image;  // 32x32x3 in [0,1]
  std::string caption;
  int color_id = 0;
  int shape_id = 0;
  int background_id = 0;
};

struct SampleClasses {
  int color_id = -1;
  int shape_id = -1;
  int background_id = -1;
};

// Renders "a {color} {shape} on a {background} background" samples.
// Balanced over the 16 class combinations; shape area covers 20-60% of the
// canvas with a small center jitter. Deterministic given the seed.
std::vector<ShapeSample> generate_dataset(int64_t n, uint64_t seed,
                                          int64_t image_size = 32);

// Recovers the class ids from a caption; -1 for words not found.
SampleClasses parse_caption(const std::string& caption);

// Writes images/NNNNNN.ppm plus a manifest.jsonl of
// {"id":u64,"caption":str,"image_path":str} lines. Returns manifest path.
std::string write_dataset(const std::string& out_dir,
                          const std::vector<ShapeSample>& samples);

// Loads a dataset back from its manifest.
std::vector<ShapeSample> load_dataset(const std::string& manifest_path);

}  // namespace nextscale
