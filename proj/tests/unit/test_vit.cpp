#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "common/error.hpp"
#include "support/model_check.hpp"
#include "tensor/ops.hpp"
#include "vit/model.hpp"

using namespace lethe;
using vit::ViTConfig;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor images_for(const ViTConfig& c, std::size_t batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return check::random_tensor({batch, c.channels, c.image_size, c.image_size}, rng);
}

}  // namespace

TEST(Patchify, FourByFourWithPatchTwo) {
  ViTConfig c = check::tiny_config();
  c.image_size = 4;
  c.patch_size = 2;
  std::vector<double> px(16);
  for (std::size_t i = 0; i < 16; ++i) px[i] = static_cast<double>(i);
  auto out = vit::patchify(Tensor({1, 1, 4, 4}, px), c);
  EXPECT_EQ(out.shape(), (Shape{1, 4, 4}));
  EXPECT_EQ(vals(out), (std::vector<double>{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15}));
}

TEST(Patchify, ChannelMajorWithinPatch) {
  ViTConfig c = check::tiny_config();
  c.image_size = 2;
  c.patch_size = 2;
  c.channels = 2;
  auto out = vit::patchify(Tensor({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}), c);
  EXPECT_EQ(vals(out), (std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8}));
}

TEST(Patchify, ConstantImageGivesEqualPatches) {
  auto c = check::tiny_config();
  auto out = vit::patchify(Tensor::full({1, 1, 8, 8}, 0.5), c);
  for (double v : out.values()) EXPECT_EQ(v, 0.5);
}

TEST(Patchify, WholeImagePatch) {
  auto c = check::tiny_config();
  c.patch_size = 8;
  auto img = images_for(c, 1, 1);
  auto out = vit::patchify(img, c);
  EXPECT_EQ(out.shape(), (Shape{1, 1, 64}));
  EXPECT_EQ(vals(out), vals(img));
}

TEST(Patchify, IndivisibleSizeIsConfigError) {
  auto c = check::tiny_config();
  c.patch_size = 3;
  EXPECT_THROW(vit::patchify(Tensor::zeros({1, 1, 8, 8}), c), ConfigError);
}

TEST(Config, ValidateRejectsBadGeometry) {
  auto c = check::tiny_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = check::tiny_config();
  c.patch_size = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Init, DeterministicAndSeedSensitive) {
  auto c = check::tiny_config();
  auto a = vit::init_params(c, 4), b = vit::init_params(c, 4), d = vit::init_params(c, 5);
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_NE(a.checksum(), d.checksum());
  for (double g : a.blocks[0].norm1_gamma.values()) EXPECT_EQ(g, 1.0);
  for (double v : a.patch_weight.values()) EXPECT_LE(std::abs(v), 0.04);
  for (double v : a.head_bias.values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, LogitShapeAndAttentionRows) {
  auto c = check::tiny_config();
  auto p = check::random_params(c, 3);
  Tape tape(Tape::Mode::kInference);
  auto out = vit::forward(tape, p, images_for(c, 3, 2), true);
  EXPECT_EQ(out.logits.shape(), (Shape{3, 3}));
  ASSERT_TRUE(out.last_attention.has_value());
  const auto& w = out.last_attention->weights;
  EXPECT_EQ(w.shape(), (Shape{3, 2, 5, 5}));
  for (std::size_t r = 0; r < w.numel() / 5; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_GE(w[r * 5 + j], 0.0);
      s += w[r * 5 + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Forward, ZeroQueryKeyGivesUniformAttention) {
  auto c = check::tiny_config();
  c.depth = 2;
  auto p = check::random_params(c, 3);
  for (auto& b : p.blocks) {
    b.wq = Tensor::zeros(b.wq.shape(), true);
    b.wk = Tensor::zeros(b.wk.shape(), true);
  }
  Tape tape(Tape::Mode::kInference);
  auto out = vit::forward(tape, p, images_for(c, 2, 2), true);
  for (double v : out.last_attention->weights.values()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Forward, ShapeMismatchIsDimensionError) {
  auto c = check::tiny_config();
  auto p = vit::init_params(c, 1);
  Tape tape;
  EXPECT_THROW(vit::forward(tape, p, Tensor::zeros({1, 1, 4, 4})), DimensionError);
  EXPECT_THROW(vit::forward(tape, p, Tensor::zeros({1, 2, 8, 8})), DimensionError);
}

TEST(Forward, BatchPermutationPermutesLogits) {
  auto c = check::tiny_config();
  auto p = check::random_params(c, 8);
  auto img = images_for(c, 4, 9);
  std::vector<std::size_t> perm{2, 0, 3, 1};
  auto base = vit::predict_logits(p, img);
  auto permuted = vit::predict_logits(p, take(img, perm));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(permuted[i * 3 + k], base[perm[i] * 3 + k]);
}

TEST(Forward, ChunkedPredictionMatchesSingleBatch) {
  auto c = check::tiny_config();
  auto p = check::random_params(c, 8);
  auto img = images_for(c, 5, 9);
  EXPECT_EQ(vals(vit::predict_logits(p, img, 2)), vals(vit::predict_logits(p, img, 64)));
}

TEST(Forward, Deterministic) {
  auto c = check::tiny_config();
  auto p = check::random_params(c, 8);
  auto img = images_for(c, 3, 1);
  Tape t1(Tape::Mode::kInference), t2(Tape::Mode::kInference);
  EXPECT_EQ(vals(vit::forward(t1, p, img).logits), vals(vit::forward(t2, p, img).logits));
}

TEST(Forward, FullModelGradientMatchesFiniteDifferences) {
  auto res = check::model_grad_check();
  EXPECT_LT(res.max_rel_error, 1e-3) << "worst parameter index " << res.worst_input;
}

TEST(Params, CloneIsIndependent) {
  auto p = vit::init_params(check::tiny_config(), 2);
  auto q = p.clone();
  EXPECT_EQ(p.checksum(), q.checksum());
  EXPECT_FALSE(p.patch_weight.same_storage(q.patch_weight));
}

TEST(Params, SaveLoadRecoversArchitecture) {
  auto c = check::tiny_config();
  c.depth = 2;
  c.channels = 3;
  c.mlp_ratio = 1.5;
  auto p = vit::init_params(c, 6);
  auto path = std::filesystem::temp_directory_path() / "lethe_vit_params.ltvt";
  vit::save_params(path, p);
  auto q = vit::load_params(path);
  std::filesystem::remove(path);
  EXPECT_EQ(q.config, c);
  EXPECT_EQ(q.checksum(), p.checksum());
  auto named = q.named();
  EXPECT_EQ(named[4].name, "block0.norm1.gamma");
  EXPECT_EQ(named[6].name, "block0.attn.wq");
}

TEST(Params, MissingTensorIsFormatError) {
  auto named = vit::init_params(check::tiny_config(), 1).named();
  named.pop_back();
  EXPECT_THROW(vit::params_from_named(named), FormatError);
}
