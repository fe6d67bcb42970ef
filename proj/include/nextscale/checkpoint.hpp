#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nextscale/schedule.hpp"
#include "nextscale/tensor.hpp"

namespace nextscale {

// Chunked binary checkpoint container (little-endian):
//   magic "VARC" | version u32 | module tag u8
//   schedule: K u32, then K x (h u32, w u32)
//   record count u32
//   per record: name len u16 + UTF-8 name | dtype u8 | ndim u8
//               | dims u32 x ndim | payload
// dtype 0 = 32-bit IEEE-754 float, dtype 1 = 32-bit signed integer
// (token dumps).
inline constexpr uint32_t kCheckpointVersion = 1;

enum class ModuleTag : uint8_t {
  kTokenizer = 1,
  kTextEncoder = 2,
  kVarTransformer = 3,
  kTokenDump = 4,
};

struct CheckpointRecord {
  Shape shape;
  std::vector<float> f32;
  std::vector<int32_t> i32;
  bool int_dtype = false;
  bool is_int() const { return int_dtype; }
};

struct Checkpoint {
  ModuleTag tag = ModuleTag::kTokenizer;
  ScaleSchedule schedule;
  std::vector<std::pair<std::string, CheckpointRecord>> records;

  const CheckpointRecord* find(const std::string& name) const {
    for (const auto& [n, r] : records) {
      if (n == name) return &r;
    }
    return nullptr;
  }
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

// Convenience bridges between live float parameters and the container.
Checkpoint snapshot_params(
    ModuleTag tag, const ScaleSchedule& schedule,
    const std::vector<std::pair<std::string, Tensor<float>>>& params);
void restore_params(
    const Checkpoint& checkpoint,
    const std::vector<std::pair<std::string, Tensor<float>>>& params);

}  // namespace nextscale
