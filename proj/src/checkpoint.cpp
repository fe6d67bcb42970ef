#include "nextscale/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace nextscale {

namespace {

constexpr char kMagic[4] = {'V', 'A', 'R', 'C'};

[[noreturn]] void format_error(const std::string& path, const std::string& what,
                               uint64_t offset) {
  throw std::runtime_error("checkpoint '" + path + "': " + what +
                           " at byte offset " + std::to_string(offset));
}

class Reader {
 public:
  Reader(std::ifstream& in, std::string path)
      : in_(in), path_(std::move(path)) {}

  template <typename T>
  T scalar() {
    T value;
    raw(&value, sizeof(T));
    return value;
  }

  void raw(void* dst, size_t bytes) {
    if (!in_.read(reinterpret_cast<char*>(dst),
                  static_cast<std::streamsize>(bytes))) {
      format_error(path_, "truncated file", offset_);
    }
    offset_ += bytes;
  }

  uint64_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

 private:
  std::ifstream& in_;
  std::string path_;
  uint64_t offset_ = 0;
};

template <typename T>
void write_scalar(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  write_scalar<uint32_t>(out, kCheckpointVersion);
  write_scalar<uint8_t>(out, static_cast<uint8_t>(checkpoint.tag));
  write_scalar<uint32_t>(out,
                         static_cast<uint32_t>(checkpoint.schedule.sizes.size()));
  for (const auto& [h, w] : checkpoint.schedule.sizes) {
    write_scalar<uint32_t>(out, static_cast<uint32_t>(h));
    write_scalar<uint32_t>(out, static_cast<uint32_t>(w));
  }
  write_scalar<uint32_t>(out, static_cast<uint32_t>(checkpoint.records.size()));
  for (const auto& [name, record] : checkpoint.records) {
    write_scalar<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_scalar<uint8_t>(out, record.is_int() ? 1 : 0);
    write_scalar<uint8_t>(out, static_cast<uint8_t>(record.shape.size()));
    for (int64_t d : record.shape) {
      write_scalar<uint32_t>(out, static_cast<uint32_t>(d));
    }
    if (record.is_int()) {
      out.write(reinterpret_cast<const char*>(record.i32.data()),
                static_cast<std::streamsize>(record.i32.size() * 4));
    } else {
      out.write(reinterpret_cast<const char*>(record.f32.data()),
                static_cast<std::streamsize>(record.f32.size() * 4));
    }
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  Reader r(in, path);

  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) format_error(path, "bad magic", 0);
  const uint32_t version = r.scalar<uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint '" + path + "': unsupported version " +
                             std::to_string(version));
  }

  Checkpoint checkpoint;
  checkpoint.tag = static_cast<ModuleTag>(r.scalar<uint8_t>());
  const uint32_t num_scales = r.scalar<uint32_t>();
  for (uint32_t k = 0; k < num_scales; ++k) {
    const uint32_t h = r.scalar<uint32_t>();
    const uint32_t w = r.scalar<uint32_t>();
    checkpoint.schedule.sizes.emplace_back(h, w);
  }
  const uint32_t count = r.scalar<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.scalar<uint16_t>();
    std::string name(name_len, '\0');
    r.raw(name.data(), name_len);
    const uint8_t dtype = r.scalar<uint8_t>();
    if (dtype > 1) {
      format_error(path, "unknown dtype " + std::to_string(dtype),
                   r.offset() - 1);
    }
    const uint8_t ndim = r.scalar<uint8_t>();
    CheckpointRecord record;
    int64_t numel = 1;
    for (uint8_t d = 0; d < ndim; ++d) {
      const uint32_t dim = r.scalar<uint32_t>();
      record.shape.push_back(dim);
      numel *= dim;
    }
    record.int_dtype = dtype == 1;
    if (dtype == 0) {
      record.f32.resize(static_cast<size_t>(numel));
      r.raw(record.f32.data(), static_cast<size_t>(numel) * 4);
    } else {
      record.i32.resize(static_cast<size_t>(numel));
      r.raw(record.i32.data(), static_cast<size_t>(numel) * 4);
    }
    checkpoint.records.emplace_back(std::move(name), std::move(record));
  }
  return checkpoint;
}

Checkpoint snapshot_params(
    ModuleTag tag, const ScaleSchedule& schedule,
    const std::vector<std::pair<std::string, Tensor<float>>>& params) {
  Checkpoint checkpoint;
  checkpoint.tag = tag;
  checkpoint.schedule = schedule;
  for (const auto& [name, tensor] : params) {
    CheckpointRecord record;
    record.shape = tensor.shape();
    record.f32 = tensor.values();
    checkpoint.records.emplace_back(name, std::move(record));
  }
  return checkpoint;
}

void restore_params(
    const Checkpoint& checkpoint,
    const std::vector<std::pair<std::string, Tensor<float>>>& params) {
  for (const auto& [name, tensor] : params) {
    const CheckpointRecord* record = checkpoint.find(name);
    if (record == nullptr) {
      throw std::runtime_error("checkpoint: missing record '" + name + "'");
    }
    if (record->shape != tensor.shape() || record->is_int()) {
      throw std::runtime_error("checkpoint: record '" + name +
                               "' has shape/dtype mismatch");
    }
    const_cast<Tensor<float>&>(tensor).values() = record->f32;
  }
}

}  // namespace nextscale
