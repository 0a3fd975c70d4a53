#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor/tensor.hpp"
#include "vit/model.hpp"

namespace lethe::masking {

enum class MaskType { kZero, kGaussian };

std::string to_string(MaskType type);
// Accepts "zero" or "gaussian"; anything else is a ConfigError.
MaskType parse_mask_type(const std::string& name);

struct MaskSpec {
  double ratio = 0.05;
  MaskType type = MaskType::kZero;
  double gaussian_std = 1.0;

  void validate() const;
};

using IndexLists = std::vector<std::vector<std::size_t>>;

struct MaskedBatch {
  Tensor images;
  IndexLists masked_indices;  // per sample, sorted ascending
};

// floor(ratio * n), tolerant of ratios like 0.3 whose product lands a hair
// below an integer.
std::size_t masked_count(double ratio, std::size_t n);

// a[b, i] = mean over heads of A[b, h, 0, i + 1].
Tensor class_token_attention(const vit::AttentionMap& attn);

// The k largest scores per row, lower index first on ties, returned sorted.
IndexLists select_top_k(const Tensor& scores, double ratio);

// Overwrites the listed patches. Gaussian draws for sample b come from seed + b;
// pixels outside the listed patches are copied unchanged.
MaskedBatch apply_mask(const Tensor& images, const IndexLists& indices, const MaskSpec& spec, std::size_t patch_size,
                       std::uint64_t seed);

// Attention from the frozen model's last block picks the patches to mask.
MaskedBatch build_masked_view(const vit::ViTParams& original, const Tensor& images, const MaskSpec& spec,
                              std::uint64_t seed = 0, std::size_t batch = 64);

}  // namespace lethe::masking
