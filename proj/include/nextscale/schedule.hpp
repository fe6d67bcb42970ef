#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nextscale {

// Ordered token-map sizes from the 1x1 start map up to the full feature
// resolution.
struct ScaleSchedule {
  std::vector<std::pair<int64_t, int64_t>> sizes;

  ScaleSchedule() = default;
  ScaleSchedule(std::initializer_list<std::pair<int64_t, int64_t>> s)
      : sizes(s) {}

  int64_t num_scales() const { return static_cast<int64_t>(sizes.size()); }
  int64_t final_h() const { return sizes.back().first; }
  int64_t final_w() const { return sizes.back().second; }

  int64_t total_tokens() const {
    int64_t n = 0;
    for (const auto& [h, w] : sizes) n += h * w;
    return n;
  }

  int64_t tokens_at(int64_t k) const {
    return sizes[static_cast<size_t>(k)].first *
           sizes[static_cast<size_t>(k)].second;
  }

  void validate() const {
    if (sizes.empty()) throw std::invalid_argument("schedule: empty");
    if (sizes.front() != std::make_pair<int64_t, int64_t>(1, 1)) {
      throw std::invalid_argument("schedule: first scale must be 1x1");
    }
    for (size_t i = 1; i < sizes.size(); ++i) {
      if (sizes[i].first < sizes[i - 1].first ||
          sizes[i].second < sizes[i - 1].second) {
        throw std::invalid_argument("schedule: sizes must be non-decreasing");
      }
    }
  }

  bool operator==(const ScaleSchedule& other) const = default;
};

inline ScaleSchedule default_schedule() {
  return ScaleSchedule{{1, 1}, {2, 2}, {4, 4}, {8, 8}};
}

}  // namespace nextscale
