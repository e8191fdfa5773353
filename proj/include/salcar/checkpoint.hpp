#pragma once

// Binary checkpoint layout (little-endian):
//   "JSCR" | version u32 | count u32 |
//   count x { name_len u16 | UTF-8 name | rank u8 | rank x dim u32 | float32 payload }
// optionally followed by a metadata trailer:
//   "JSCM" | byte_len u32 | "key=value\n" lines

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "salcar/tensor.hpp"

namespace salcar {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> entries;
  std::map<std::string, std::string> meta;

  const Tensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace salcar
