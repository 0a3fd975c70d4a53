#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tensor/tensor.hpp"

namespace lethe {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Checkpoint layout, all integers little-endian:
//   "LTVT" | version u32 | count u32 |
//   per tensor: name_len u16, name bytes, rank u8, dims u32 x rank, f32 payload |
//   checksum u64 (sum of all payload bytes mod 2^64)
// Values are stored as 32-bit floats; loading widens them back to double.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

// The checksum the file trailer would carry for these tensors.
std::uint64_t checkpoint_checksum(std::span<const NamedTensor> tensors);

}  // namespace lethe
