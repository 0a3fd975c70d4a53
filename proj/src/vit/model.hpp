#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tensor/checkpoint.hpp"
#include "tensor/tensor.hpp"

namespace lethe::vit {

struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t channels = 1;
  std::size_t depth = 2;
  std::size_t heads = 2;
  std::size_t dim = 32;
  double mlp_ratio = 2.0;
  std::size_t num_classes = 3;

  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t tokens() const { return num_patches() + 1; }
  std::size_t head_dim() const { return dim / heads; }
  std::size_t patch_len() const { return channels * patch_size * patch_size; }
  std::size_t mlp_hidden() const;

  // Throws ConfigError naming the violated constraint.
  void validate() const;

  bool operator==(const ViTConfig&) const = default;
};

struct BlockParams {
  Tensor norm1_gamma, norm1_beta;
  Tensor wq, wk, wv;  // [heads x dim x head_dim]
  Tensor wo, bo;      // output projection over concatenated heads
  Tensor norm2_gamma, norm2_beta;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// Parameter names follow dotted paths such as "block0.attn.wq".
struct ViTParams {
  ViTConfig config;
  Tensor patch_weight;  // [channels x patch x patch x dim]
  Tensor patch_bias;    // [dim]
  Tensor cls_token;     // [1 x dim]
  Tensor pos_embed;     // [tokens x dim]
  std::vector<BlockParams> blocks;
  Tensor norm_gamma, norm_beta;
  Tensor head_weight;  // [dim x classes]
  Tensor head_bias;

  std::vector<NamedTensor> named() const;
  // Visits every parameter in checkpoint order with a mutable handle.
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);

  // Independent storage for every tensor.
  ViTParams clone() const;
  std::uint64_t checksum() const { return checkpoint_checksum(named()); }
};

// Truncated normal (std 0.02, cut at two std) for weights, class token and
// position embeddings; zero biases and norm offsets; unit norm gains.
ViTParams init_params(const ViTConfig& config, std::uint64_t seed);

// Rebuilds parameters from checkpoint tensors, recovering the architecture
// from the stored shapes.
ViTParams params_from_named(const std::vector<NamedTensor>& tensors);
void save_params(const std::filesystem::path& path, const ViTParams& params);
ViTParams load_params(const std::filesystem::path& path);

// Softmax attention weights, [batch x heads x tokens x tokens].
struct AttentionMap {
  Tensor weights;
};

struct ForwardOutput {
  Tensor logits;  // [batch x classes]
  std::optional<AttentionMap> last_attention;
};

// images[B x C x S x S] -> [B x N x (C * P * P)]. Patches run row-major over
// the grid (top-left is 0); each patch vector is channel-major, then pixel
// row, then pixel column.
Tensor patchify(const Tensor& images, const ViTConfig& config);

// Pre-norm ViT classifier reading the class token. With capture_attention the
// final block's per-head softmax weights are returned as well.
ForwardOutput forward(Tape& tape, const ViTParams& params, const Tensor& images, bool capture_attention = false);

// Inference-only logits, evaluated in chunks of `batch` images.
Tensor predict_logits(const ViTParams& params, const Tensor& images, std::size_t batch = 64);

}  // namespace lethe::vit
