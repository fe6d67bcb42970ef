#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace nextscale {

// External text-embedding container, so precomputed embeddings from a real
// pretrained encoder can be dropped in.
//
// Layout (little-endian):
//   magic "VCEM" | version u32 | count u32 | dim u32
//   per record: caption-id u64 | dim x f32
inline constexpr uint32_t kEmbeddingFormatVersion = 1;

struct EmbeddingFile {
  uint32_t dim = 0;
  std::map<uint64_t, std::vector<float>> embeddings;  // caption id -> e_c
};

void save_embeddings(const std::string& path, const EmbeddingFile& file);
EmbeddingFile load_embeddings(const std::string& path);

}  // namespace nextscale
