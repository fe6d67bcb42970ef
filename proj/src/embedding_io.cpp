#include "nextscale/embedding_io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace nextscale {

namespace {

constexpr char kMagic[4] = {'V', 'C', 'E', 'M'};

[[noreturn]] void format_error(const std::string& path, const std::string& what,
                               uint64_t offset) {
  throw std::runtime_error("embedding file '" + path + "': " + what +
                           " at byte offset " + std::to_string(offset));
}

template <typename T>
void write_le(std::ofstream& out, T value) {
  // this build targets little-endian hosts
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in, const std::string& path, uint64_t* offset) {
  T value;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    format_error(path, "truncated file", *offset);
  }
  *offset += sizeof(T);
  return value;
}

}  // namespace

void save_embeddings(const std::string& path, const EmbeddingFile& file) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  write_le<uint32_t>(out, kEmbeddingFormatVersion);
  write_le<uint32_t>(out, static_cast<uint32_t>(file.embeddings.size()));
  write_le<uint32_t>(out, file.dim);
  for (const auto& [id, vec] : file.embeddings) {
    if (vec.size() != file.dim) {
      throw std::invalid_argument("embedding for caption " + std::to_string(id) +
                                  " has dim " + std::to_string(vec.size()) +
                                  ", header says " + std::to_string(file.dim));
    }
    write_le<uint64_t>(out, id);
    out.write(reinterpret_cast<const char*>(vec.data()),
              static_cast<std::streamsize>(vec.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

EmbeddingFile load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  uint64_t offset = 0;
  char magic[4];
  if (!in.read(magic, 4)) format_error(path, "truncated file", offset);
  if (std::memcmp(magic, kMagic, 4) != 0) format_error(path, "bad magic", 0);
  offset += 4;
  const uint32_t version = read_le<uint32_t>(in, path, &offset);
  if (version != kEmbeddingFormatVersion) {
    format_error(path, "unsupported version " + std::to_string(version), 4);
  }
  const uint32_t count = read_le<uint32_t>(in, path, &offset);
  EmbeddingFile file;
  file.dim = read_le<uint32_t>(in, path, &offset);
  for (uint32_t i = 0; i < count; ++i) {
    const uint64_t id = read_le<uint64_t>(in, path, &offset);
    std::vector<float> vec(file.dim);
    if (!in.read(reinterpret_cast<char*>(vec.data()),
                 static_cast<std::streamsize>(vec.size() * sizeof(float)))) {
      format_error(path, "truncated record", offset);
    }
    offset += vec.size() * sizeof(float);
    file.embeddings.emplace(id, std::move(vec));
  }
  return file;
}

}  // namespace nextscale
