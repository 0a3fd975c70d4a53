#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tensor/tensor.hpp"

namespace lethe::data {

// Images [n x C x S x S], already in normalized pixel units.
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t image_size() const { return images.dim(2); }

  // Throws on empty sets, shape disagreement or labels outside [0, C).
  void validate() const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
};

struct ToySpec {
  std::size_t classes = 3;
  std::size_t per_class = 200;
  std::size_t image_size = 32;
  std::size_t channels = 1;
  double noise_std = 0.5;
  double amplitude_min = 0.5;  // per-sample grating strength
  double amplitude_max = 1.2;
  double hard_fraction = 0.25;  // samples whose grating is nearly absent
  double hard_amplitude = 0.1;
  double base_frequency = 4.0;  // cycles per image side
  std::size_t marks_min = 2;
  std::size_t marks_max = 3;
};

// Each class is an oriented sinusoidal grating whose orientation, frequency
// and phase depend only on the class index; samples add a small phase jitter,
// Gaussian pixel noise and a few high-contrast square marks at random places.
// A hard_fraction of samples carry a grating of at most hard_amplitude, so
// their label is recoverable only by memorizing the marks.
// Samples are interleaved by class (label = i mod C). Pixels are rounded to
// float so the dataset survives a save/load round trip unchanged.
LabeledDataset generate_toy_dataset(const ToySpec& spec, std::uint64_t seed);

// Forget/retain partition of the training indices plus the held-out test set.
struct DataSplit {
  std::vector<std::size_t> forget;
  std::vector<std::size_t> retain;
  LabeledDataset test;

  // Disjoint, sorted and covering [0, n). Throws ContractError otherwise.
  void validate(std::size_t n) const;
};

// floor(ratio * n) indices drawn by a seeded shuffle; both lists sorted.
DataSplit split_random_forget(const LabeledDataset& train, const LabeledDataset& test, double ratio,
                              std::uint64_t seed);

// "LTDS" | version u32 | n, C, S, channels u32 | f32 pixels | u16 labels |
// checksum u64 (sum of pixel and label bytes mod 2^64)
inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_dataset(const LabeledDataset& ds);
LabeledDataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::filesystem::path& path);

// Forget and retain index lists as JSON text. The test set lives in its own
// dataset file.
std::string split_to_json(const DataSplit& split, double ratio, std::uint64_t seed);
void save_split(const std::filesystem::path& path, const DataSplit& split, double ratio, std::uint64_t seed);
// Reads the index lists and attaches `test`; validates against n_train. The
// recorded ratio and seed are returned through the optional pointers.
DataSplit load_split(const std::filesystem::path& path, LabeledDataset test, std::size_t n_train,
                     double* ratio = nullptr, std::uint64_t* seed = nullptr);

}  // namespace lethe::data
