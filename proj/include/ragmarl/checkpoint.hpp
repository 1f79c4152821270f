#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ragmarl/param_store.hpp"
#include "ragmarl/tensor.hpp"

namespace ragmarl {

// Binary checkpoint container, all integers and floats little-endian:
//
//   magic      8 bytes   "RMARLCK\0"
//   version    u32       kCheckpointVersion
//   step       u64
//   count      u32       number of entries
//   entries    count x { u32 name_len, name bytes, u32 rank,
//                        u64 dims[rank], f64 values[prod(dims)] }
//   checksum   u64       FNV-1a over every preceding byte
//
// Loading validates the whole file before returning anything.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  std::uint64_t step = 0;
  std::vector<NamedTensor> entries;

  const Tensor* find(const std::string& name) const;
  bool has_prefix(const std::string& prefix) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes to a temporary sibling and renames, so a failed save never leaves a
/// partial file at `path`.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Appends the store's values under `prefix` (and Adam moments as
/// "<name>@m"/"<name>@v" when requested).
void append_store(Checkpoint& ckpt, const ParamStore& store,
                  const std::string& prefix, bool with_moments);

/// Fills an existing store (names and shapes must match) from entries under
/// `prefix`. Moments are restored when present.
void restore_store(const Checkpoint& ckpt, ParamStore& store,
                   const std::string& prefix);

}  // namespace ragmarl
