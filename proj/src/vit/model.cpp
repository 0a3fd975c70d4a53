#include "vit/model.hpp"

#include <cmath>
#include <map>
#include <random>

#include "common/error.hpp"
#include "tensor/ops.hpp"

namespace lethe::vit {

std::size_t ViTConfig::mlp_hidden() const {
  return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(dim)));
}

void ViTConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("vit config: " + msg); };
  if (patch_size == 0 || image_size == 0) fail("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (channels == 0) fail("channels must be positive");
  if (depth == 0) fail("depth must be positive");
  if (heads == 0 || dim == 0) fail("heads and dim must be positive");
  if (dim % heads != 0) fail("dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
  if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) fail("mlp_ratio must give a positive hidden width");
  if (num_classes < 2) fail("num_classes must be at least 2");
}

std::vector<NamedTensor> ViTParams::named() const {
  std::vector<NamedTensor> out{
      {"patch_embed.weight", patch_weight},
      {"patch_embed.bias", patch_bias},
      {"cls_token", cls_token},
      {"pos_embed", pos_embed},
  };
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string p = "block" + std::to_string(i) + ".";
    out.push_back({p + "norm1.gamma", b.norm1_gamma});
    out.push_back({p + "norm1.beta", b.norm1_beta});
    out.push_back({p + "attn.wq", b.wq});
    out.push_back({p + "attn.wk", b.wk});
    out.push_back({p + "attn.wv", b.wv});
    out.push_back({p + "attn.wo", b.wo});
    out.push_back({p + "attn.bo", b.bo});
    out.push_back({p + "norm2.gamma", b.norm2_gamma});
    out.push_back({p + "norm2.beta", b.norm2_beta});
    out.push_back({p + "mlp.w1", b.mlp_w1});
    out.push_back({p + "mlp.b1", b.mlp_b1});
    out.push_back({p + "mlp.w2", b.mlp_w2});
    out.push_back({p + "mlp.b2", b.mlp_b2});
  }
  out.push_back({"norm.gamma", norm_gamma});
  out.push_back({"norm.beta", norm_beta});
  out.push_back({"head.weight", head_weight});
  out.push_back({"head.bias", head_bias});
  return out;
}

void ViTParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("patch_embed.weight", patch_weight);
  fn("patch_embed.bias", patch_bias);
  fn("cls_token", cls_token);
  fn("pos_embed", pos_embed);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& b = blocks[i];
    const std::string p = "block" + std::to_string(i) + ".";
    fn(p + "norm1.gamma", b.norm1_gamma);
    fn(p + "norm1.beta", b.norm1_beta);
    fn(p + "attn.wq", b.wq);
    fn(p + "attn.wk", b.wk);
    fn(p + "attn.wv", b.wv);
    fn(p + "attn.wo", b.wo);
    fn(p + "attn.bo", b.bo);
    fn(p + "norm2.gamma", b.norm2_gamma);
    fn(p + "norm2.beta", b.norm2_beta);
    fn(p + "mlp.w1", b.mlp_w1);
    fn(p + "mlp.b1", b.mlp_b1);
    fn(p + "mlp.w2", b.mlp_w2);
    fn(p + "mlp.b2", b.mlp_b2);
  }
  fn("norm.gamma", norm_gamma);
  fn("norm.beta", norm_beta);
  fn("head.weight", head_weight);
  fn("head.bias", head_bias);
}

ViTParams ViTParams::clone() const {
  ViTParams copy = *this;
  copy.for_each([](const std::string&, Tensor& t) { t = t.detach(true); });
  return copy;
}

namespace {

class ParamSampler {
 public:
  explicit ParamSampler(std::uint64_t seed) : rng_(seed) {}

  Tensor trunc_normal(Shape shape) {
    std::normal_distribution<double> normal(0.0, kStd);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
      do {
        x = normal(rng_);
      } while (std::abs(x) > 2.0 * kStd);
    }
    return Tensor(std::move(shape), std::move(v), true);
  }

 private:
  static constexpr double kStd = 0.02;
  std::mt19937_64 rng_;
};

Tensor zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor ones(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

}  // namespace

ViTParams init_params(const ViTConfig& config, std::uint64_t seed) {
  config.validate();
  ParamSampler sample(seed);
  const std::size_t d = config.dim, h = config.heads, hd = config.head_dim(), m = config.mlp_hidden();

  ViTParams p;
  p.config = config;
  p.patch_weight = sample.trunc_normal({config.channels, config.patch_size, config.patch_size, d});
  p.patch_bias = zeros({d});
  p.cls_token = sample.trunc_normal({1, d});
  p.pos_embed = sample.trunc_normal({config.tokens(), d});
  for (std::size_t i = 0; i < config.depth; ++i) {
    BlockParams b;
    b.norm1_gamma = ones({d});
    b.norm1_beta = zeros({d});
    b.wq = sample.trunc_normal({h, d, hd});
    b.wk = sample.trunc_normal({h, d, hd});
    b.wv = sample.trunc_normal({h, d, hd});
    b.wo = sample.trunc_normal({d, d});
    b.bo = zeros({d});
    b.norm2_gamma = ones({d});
    b.norm2_beta = zeros({d});
    b.mlp_w1 = sample.trunc_normal({d, m});
    b.mlp_b1 = zeros({m});
    b.mlp_w2 = sample.trunc_normal({m, d});
    b.mlp_b2 = zeros({d});
    p.blocks.push_back(std::move(b));
  }
  p.norm_gamma = ones({d});
  p.norm_beta = zeros({d});
  p.head_weight = sample.trunc_normal({d, config.num_classes});
  p.head_bias = zeros({config.num_classes});
  return p;
}

ViTParams params_from_named(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, Tensor> by_name;
  for (const auto& nt : tensors) {
    if (!by_name.emplace(nt.name, nt.tensor).second) throw FormatError("checkpoint: duplicate tensor " + nt.name);
  }
  auto get = [&](const std::string& name, std::size_t rank) -> Tensor {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing tensor " + name);
    if (it->second.rank() != rank) {
      throw FormatError("checkpoint: tensor " + name + " has shape " + shape_string(it->second.shape()) +
                        ", expected rank " + std::to_string(rank));
    }
    return it->second.detach(true);
  };

  ViTParams p;
  p.patch_weight = get("patch_embed.weight", 4);
  p.pos_embed = get("pos_embed", 2);
  p.head_weight = get("head.weight", 2);

  ViTConfig c;
  c.channels = p.patch_weight.dim(0);
  c.patch_size = p.patch_weight.dim(1);
  c.dim = p.patch_weight.dim(3);
  const auto patches = p.pos_embed.dim(0) - 1;
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(patches))));
  if (side * side != patches) throw FormatError("checkpoint: pos_embed rows do not form a square patch grid");
  c.image_size = side * c.patch_size;
  c.num_classes = p.head_weight.dim(1);
  std::size_t depth = 0;
  while (by_name.count("block" + std::to_string(depth) + ".attn.wq")) ++depth;
  c.depth = depth;
  if (depth == 0) throw FormatError("checkpoint: no transformer blocks found");
  c.heads = by_name.at("block0.attn.wq").dim(0);
  c.mlp_ratio = static_cast<double>(by_name.at("block0.mlp.w1").shape().back()) / static_cast<double>(c.dim);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: inconsistent architecture: ") + e.what());
  }
  p.config = c;

  p.patch_bias = get("patch_embed.bias", 1);
  p.cls_token = get("cls_token", 2);
  for (std::size_t i = 0; i < depth; ++i) {
    const std::string pre = "block" + std::to_string(i) + ".";
    BlockParams b;
    b.norm1_gamma = get(pre + "norm1.gamma", 1);
    b.norm1_beta = get(pre + "norm1.beta", 1);
    b.wq = get(pre + "attn.wq", 3);
    b.wk = get(pre + "attn.wk", 3);
    b.wv = get(pre + "attn.wv", 3);
    b.wo = get(pre + "attn.wo", 2);
    b.bo = get(pre + "attn.bo", 1);
    b.norm2_gamma = get(pre + "norm2.gamma", 1);
    b.norm2_beta = get(pre + "norm2.beta", 1);
    b.mlp_w1 = get(pre + "mlp.w1", 2);
    b.mlp_b1 = get(pre + "mlp.b1", 1);
    b.mlp_w2 = get(pre + "mlp.w2", 2);
    b.mlp_b2 = get(pre + "mlp.b2", 1);
    p.blocks.push_back(std::move(b));
  }
  p.norm_gamma = get("norm.gamma", 1);
  p.norm_beta = get("norm.beta", 1);
  p.head_bias = get("head.bias", 1);

  // every shape must match what the recovered config implies
  const auto reference = init_params(c, 0).named();
  const auto loaded = p.named();
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (reference[i].tensor.shape() != loaded[i].tensor.shape()) {
      throw FormatError("checkpoint: tensor " + loaded[i].name + " has shape " +
                        shape_string(loaded[i].tensor.shape()) + ", expected " +
                        shape_string(reference[i].tensor.shape()));
    }
  }
  if (by_name.size() != reference.size()) throw FormatError("checkpoint: unexpected extra tensors");
  return p;
}

void save_params(const std::filesystem::path& path, const ViTParams& params) {
  save_checkpoint(path, params.named());
}

ViTParams load_params(const std::filesystem::path& path) { return params_from_named(load_checkpoint(path)); }

Tensor patchify(const Tensor& images, const ViTConfig& config) {
  const std::size_t p = config.patch_size;
  if (images.rank() != 4 || images.dim(1) != config.channels || images.dim(2) != images.dim(3)) {
    throw DimensionError("patchify: expected images [B x " + std::to_string(config.channels) + " x S x S], got " +
                         shape_string(images.shape()));
  }
  const std::size_t s = images.dim(2);
  if (p == 0 || s % p != 0) {
    throw ConfigError("patchify: image size " + std::to_string(s) + " is not divisible by patch size " +
                      std::to_string(p));
  }
  if (s != config.image_size) {
    throw DimensionError("patchify: image size " + std::to_string(s) + " does not match configured " +
                         std::to_string(config.image_size));
  }
  const std::size_t batch = images.dim(0), c = config.channels, g = s / p, n = g * g, len = c * p * p;
  auto iv = images.values();
  std::vector<double> out(batch * n * len);
  std::size_t o = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t gr = 0; gr < g; ++gr)
      for (std::size_t gc = 0; gc < g; ++gc)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t r = 0; r < p; ++r)
            for (std::size_t col = 0; col < p; ++col)
              out[o++] = iv[((b * c + ch) * s + gr * p + r) * s + gc * p + col];
  return Tensor({batch, n, len}, std::move(out));
}

ForwardOutput forward(Tape& tape, const ViTParams& params, const Tensor& images, bool capture_attention) {
  using namespace ops;
  const auto& cfg = params.config;
  if (images.rank() != 4 || images.dim(1) != cfg.channels || images.dim(2) != cfg.image_size ||
      images.dim(3) != cfg.image_size) {
    throw DimensionError("forward: expected images [B x " + std::to_string(cfg.channels) + " x " +
                         std::to_string(cfg.image_size) + " x " + std::to_string(cfg.image_size) + "], got " +
                         shape_string(images.shape()));
  }
  const std::size_t batch = images.dim(0), n = cfg.num_patches(), t = cfg.tokens(), d = cfg.dim,
                    heads = cfg.heads;
  if (batch == 0) throw DimensionError("forward: empty batch");

  // patch embedding, then [cls; patches] + pos per sample
  const Tensor patches = reshape(tape, patchify(images, cfg), {batch * n, cfg.patch_len()});
  const Tensor w_patch = reshape(tape, params.patch_weight, {cfg.patch_len(), d});
  const Tensor embedded = linear(tape, patches, w_patch, params.patch_bias);
  std::vector<Tensor> sequences;
  sequences.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor seq = concat(tape, {params.cls_token, slice(tape, embedded, 0, b * n, n)}, 0);
    sequences.push_back(add(tape, seq, params.pos_embed));
  }
  Tensor x = concat(tape, sequences, 0);  // [B*T x D]

  std::vector<double> captured;
  for (std::size_t layer = 0; layer < params.blocks.size(); ++layer) {
    const auto& blk = params.blocks[layer];
    const bool capture = capture_attention && layer + 1 == params.blocks.size();

    const Tensor normed = layer_norm(tape, x, blk.norm1_gamma, blk.norm1_beta);
    const Tensor heads_out = self_attention(tape, normed, blk.wq, blk.wk, blk.wv, t, capture ? &captured : nullptr);
    x = add(tape, x, linear(tape, heads_out, blk.wo, blk.bo));

    const Tensor normed2 = layer_norm(tape, x, blk.norm2_gamma, blk.norm2_beta);
    const Tensor hidden = gelu(tape, linear(tape, normed2, blk.mlp_w1, blk.mlp_b1));
    x = add(tape, x, linear(tape, hidden, blk.mlp_w2, blk.mlp_b2));
  }

  x = layer_norm(tape, x, params.norm_gamma, params.norm_beta);
  std::vector<Tensor> cls_rows;
  cls_rows.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) cls_rows.push_back(slice(tape, x, 0, b * t, 1));
  ForwardOutput out;
  out.logits = linear(tape, concat(tape, cls_rows, 0), params.head_weight, params.head_bias);
  if (capture_attention) {
    out.last_attention = AttentionMap{Tensor({batch, heads, t, t}, std::move(captured))};
  }
  return out;
}

Tensor predict_logits(const ViTParams& params, const Tensor& images, std::size_t batch) {
  if (batch == 0) throw ConfigError("predict_logits: batch must be positive");
  const std::size_t total = images.dim(0);
  std::vector<double> logits;
  logits.reserve(total * params.config.num_classes);
  for (std::size_t start = 0; start < total; start += batch) {
    const std::size_t count = std::min(batch, total - start);
    Tape tape(Tape::Mode::kInference);
    auto out = forward(tape, params, take_range(images, start, count));
    auto lv = out.logits.values();
    logits.insert(logits.end(), lv.begin(), lv.end());
  }
  return Tensor({total, params.config.num_classes}, std::move(logits));
}

}  // namespace lethe::vit
