#include "nextscale/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "nextscale/rng.hpp"

namespace nextscale {

namespace {

namespace fs = std::filesystem;

struct Rgb {
  float r, g, b;
};

constexpr Rgb kColors[4] = {{0.90f, 0.08f, 0.08f},
                            {0.08f, 0.85f, 0.08f},
                            {0.08f, 0.08f, 0.90f},
                            {0.95f, 0.90f, 0.08f}};
constexpr float kBackgrounds[2] = {0.05f, 0.95f};

}  // namespace

std::vector<ShapeSample> generate_dataset(int64_t n, uint64_t seed,
                                          int64_t image_size) {
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  Rng rng(seed);
  std::vector<ShapeSample> samples;
  samples.reserve(static_cast<size_t>(n));
  const int64_t s = image_size;
  for (int64_t i = 0; i < n; ++i) {
    const int combo = static_cast<int>(i % 16);
    ShapeSample sample;
    sample.id = static_cast<uint64_t>(i);
    sample.color_id = combo % 4;
    sample.shape_id = (combo / 4) % 2;
    sample.background_id = combo / 8;
    sample.caption = "a " + color_names()[sample.color_id] + " " +
                     shape_names()[sample.shape_id] + " on a " +
                     background_names()[sample.background_id] + " background";

    sample.image.height = s;
    sample.image.width = s;
    sample.image.pixels.assign(static_cast<size_t>(3 * s * s),
                               kBackgrounds[sample.background_id]);

    // shape covers 20-60% of the canvas, centered with +/-2 px jitter
    const double scale = static_cast<double>(s) / 32.0;
    const double cx = (static_cast<double>(s) - 1.0) / 2.0 +
                      static_cast<double>(rng.uniform_int(5) - 2) * scale;
    const double cy = (static_cast<double>(s) - 1.0) / 2.0 +
                      static_cast<double>(rng.uniform_int(5) - 2) * scale;
    const Rgb fill = kColors[sample.color_id];

    auto paint = [&](int64_t y, int64_t x) {
      sample.image.at(0, y, x) = fill.r;
      sample.image.at(1, y, x) = fill.g;
      sample.image.at(2, y, x) = fill.b;
    };
    if (sample.shape_id == 0) {
      const double u = rng.uniform();
      int64_t side = static_cast<int64_t>(
          std::lround(std::sqrt(0.2 + 0.4 * u) * static_cast<double>(s)));
      side = std::clamp<int64_t>(side, static_cast<int64_t>(15 * scale),
                                 static_cast<int64_t>(24 * scale));
      const double half = static_cast<double>(side) / 2.0;
      for (int64_t y = 0; y < s; ++y) {
        for (int64_t x = 0; x < s; ++x) {
          if (std::abs(static_cast<double>(y) - cy) < half &&
              std::abs(static_cast<double>(x) - cx) < half) {
            paint(y, x);
          }
        }
      }
    } else {
      const double u = rng.uniform();
      const double radius = (8.5 + 5.0 * u) * scale;
      const double r2 = radius * radius;
      for (int64_t y = 0; y < s; ++y) {
        for (int64_t x = 0; x < s; ++x) {
          const double dy = static_cast<double>(y) - cy;
          const double dx = static_cast<double>(x) - cx;
          if (dy * dy + dx * dx <= r2) paint(y, x);
        }
      }
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

SampleClasses parse_caption(const std::string& caption) {
  SampleClasses classes;
  std::istringstream is(caption);
  std::string word;
  while (is >> word) {
    for (size_t i = 0; i < color_names().size(); ++i) {
      if (word == color_names()[i]) classes.color_id = static_cast<int>(i);
    }
    for (size_t i = 0; i < shape_names().size(); ++i) {
      if (word == shape_names()[i]) classes.shape_id = static_cast<int>(i);
    }
    for (size_t i = 0; i < background_names().size(); ++i) {
      if (word == background_names()[i]) {
        classes.background_id = static_cast<int>(i);
      }
    }
  }
  return classes;
}

std::string write_dataset(const std::string& out_dir,
                          const std::vector<ShapeSample>& samples) {
  fs::create_directories(fs::path(out_dir) / "images");
  const std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) {
    throw std::runtime_error("cannot open '" + manifest_path + "' for writing");
  }
  for (const auto& sample : samples) {
    std::ostringstream name;
    name << "images/";
    name.width(6);
    name.fill('0');
    name << sample.id;
    name << ".ppm";
    write_ppm((fs::path(out_dir) / name.str()).string(), sample.image);
    nlohmann::json line = {{"id", sample.id},
                           {"caption", sample.caption},
                           {"image_path", name.str()}};
    manifest << line.dump() << "\n";
  }
  if (!manifest) throw std::runtime_error("write failed for '" + manifest_path + "'");
  return manifest_path;
}

std::vector<ShapeSample> load_dataset(const std::string& manifest_path) {
  std::ifstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("cannot open '" + manifest_path + "'");
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<ShapeSample> samples;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const nlohmann::json parsed = nlohmann::json::parse(line);
    ShapeSample sample;
    sample.id = parsed.at("id").get<uint64_t>();
    sample.caption = parsed.at("caption").get<std::string>();
    sample.image = read_ppm((base / parsed.at("image_path").get<std::string>()).string());
    const SampleClasses classes = parse_caption(sample.caption);
    sample.color_id = classes.color_id;
    sample.shape_id = classes.shape_id;
    sample.background_id = classes.background_id;
    samples.push_back(std::move(sample));
  }
  return samples;
}

}  // namespace nextscale
