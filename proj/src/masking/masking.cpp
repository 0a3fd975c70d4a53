#include "masking/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "common/error.hpp"

namespace lethe::masking {

std::string to_string(MaskType type) { return type == MaskType::kZero ? "zero" : "gaussian"; }

MaskType parse_mask_type(const std::string& name) {
  if (name == "zero") return MaskType::kZero;
  if (name == "gaussian") return MaskType::kGaussian;
  throw ConfigError("mask_type must be zero or gaussian, got \"" + name + "\"");
}

void MaskSpec::validate() const {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("mask ratio must lie in [0, 1], got " + std::to_string(ratio));
  if (type == MaskType::kGaussian && !(gaussian_std > 0.0 && std::isfinite(gaussian_std))) {
    throw ConfigError("gaussian_std must be positive, got " + std::to_string(gaussian_std));
  }
}

std::size_t masked_count(double ratio, std::size_t n) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("mask ratio must lie in [0, 1], got " + std::to_string(ratio));
  return std::min(n, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9)));
}

Tensor class_token_attention(const vit::AttentionMap& attn) {
  const auto& w = attn.weights;
  if (w.rank() != 4 || w.dim(2) != w.dim(3)) {
    throw DimensionError("class_token_attention: expected [B x H x T x T], got " + shape_string(w.shape()));
  }
  const std::size_t b = w.dim(0), h = w.dim(1), t = w.dim(2);
  if (h == 0) throw ConfigError("class_token_attention: no heads");
  if (t < 2) throw ConfigError("class_token_attention: no patch tokens");
  const std::size_t n = t - 1;
  auto wv = w.values();
  std::vector<double> out(b * n, 0.0);
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t head = 0; head < h; ++head) {
      const double* row = wv.data() + (s * h + head) * t * t;  // query 0 is the class token
      for (std::size_t i = 0; i < n; ++i) out[s * n + i] += row[i + 1];
    }
    for (std::size_t i = 0; i < n; ++i) out[s * n + i] /= static_cast<double>(h);
  }
  return Tensor({b, n}, std::move(out));
}

IndexLists select_top_k(const Tensor& scores, double ratio) {
  if (scores.rank() != 2) throw DimensionError("select_top_k: expected [B x N], got " + shape_string(scores.shape()));
  const std::size_t b = scores.dim(0), n = scores.dim(1), k = masked_count(ratio, n);
  auto sv = scores.values();
  IndexLists out(b);
  std::vector<std::size_t> order(n);
  for (std::size_t s = 0; s < b; ++s) {
    const double* row = sv.data() + s * n;
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [row](std::size_t a, std::size_t c) { return row[a] > row[c] || (row[a] == row[c] && a < c); });
    out[s].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(out[s].begin(), out[s].end());
  }
  return out;
}

MaskedBatch apply_mask(const Tensor& images, const IndexLists& indices, const MaskSpec& spec, std::size_t patch_size,
                       std::uint64_t seed) {
  spec.validate();
  if (images.rank() != 4 || images.dim(2) != images.dim(3)) {
    throw DimensionError("apply_mask: expected [B x C x S x S], got " + shape_string(images.shape()));
  }
  const std::size_t b = images.dim(0), c = images.dim(1), s = images.dim(2);
  if (patch_size == 0 || s % patch_size != 0) {
    throw ConfigError("apply_mask: image size " + std::to_string(s) + " is not divisible by patch size " +
                      std::to_string(patch_size));
  }
  if (indices.size() != b) {
    throw DimensionError("apply_mask: " + std::to_string(indices.size()) + " index lists for " + std::to_string(b) +
                         " images");
  }
  const std::size_t g = s / patch_size, n = g * g;
  std::vector<double> px(images.values().begin(), images.values().end());
  for (std::size_t sample = 0; sample < b; ++sample) {
    std::mt19937_64 rng(seed + sample);
    std::normal_distribution<double> normal(0.0, spec.gaussian_std);
    for (auto idx : indices[sample]) {
      if (idx >= n) {
        throw IndexError("apply_mask: patch index " + std::to_string(idx) + " for sample " + std::to_string(sample) +
                         " outside [0, " + std::to_string(n) + ")");
      }
      const std::size_t r0 = (idx / g) * patch_size, c0 = (idx % g) * patch_size;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t r = r0; r < r0 + patch_size; ++r)
          for (std::size_t col = c0; col < c0 + patch_size; ++col) {
            px[((sample * c + ch) * s + r) * s + col] = spec.type == MaskType::kZero ? 0.0 : normal(rng);
          }
    }
  }
  return {Tensor(images.shape(), std::move(px)), indices};
}

MaskedBatch build_masked_view(const vit::ViTParams& original, const Tensor& images, const MaskSpec& spec,
                              std::uint64_t seed, std::size_t batch) {
  spec.validate();
  if (batch == 0) throw ConfigError("build_masked_view: batch must be positive");
  const std::size_t total = images.dim(0);
  IndexLists indices;
  indices.reserve(total);
  if (masked_count(spec.ratio, original.config.num_patches()) == 0) {
    indices.assign(total, {});
  } else {
    for (std::size_t start = 0; start < total; start += batch) {
      const std::size_t count = std::min(batch, total - start);
      Tape tape(Tape::Mode::kInference);
      auto out = vit::forward(tape, original, take_range(images, start, count), true);
      auto lists = select_top_k(class_token_attention(*out.last_attention), spec.ratio);
      for (auto& l : lists) indices.push_back(std::move(l));
    }
  }
  return apply_mask(images, indices, spec, original.config.patch_size, seed);
}

}  // namespace lethe::masking
