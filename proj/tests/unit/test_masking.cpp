#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "common/error.hpp"
#include "masking/masking.hpp"
#include "support/model_check.hpp"

using namespace lethe;
using masking::MaskSpec;
using masking::MaskType;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Stable descending sort of indices, first k kept, then sorted ascending.
std::vector<std::size_t> sort_oracle(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Patch index of pixel (y, x) for a row-major patch grid.
std::size_t patch_of(std::size_t y, std::size_t x, std::size_t patch, std::size_t side) {
  return (y / patch) * (side / patch) + x / patch;
}

Tensor random_images(std::size_t b, std::size_t c, std::size_t s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return check::random_tensor({b, c, s, s}, rng, 0.5, 1.5);
}

}  // namespace

TEST(MaskedCount, FloorOfRatioTimesN) {
  EXPECT_EQ(masking::masked_count(0.05, 196), 9u);
  EXPECT_EQ(masking::masked_count(0.0, 64), 0u);
  EXPECT_EQ(masking::masked_count(1.0, 64), 64u);
  EXPECT_EQ(masking::masked_count(0.3, 10), 3u);
  EXPECT_EQ(masking::masked_count(0.05, 64), 3u);
}

TEST(ClassTokenAttention, TwoHeadExample) {
  // B=1, H=2, T=3; only the class-token rows matter.
  std::vector<double> a(18, 0.0);
  const double h0[] = {0.2, 0.5, 0.3}, h1[] = {0.4, 0.1, 0.5};
  std::copy(h0, h0 + 3, a.begin());
  std::copy(h1, h1 + 3, a.begin() + 9);
  auto s = masking::class_token_attention({Tensor({1, 2, 3, 3}, a)});
  EXPECT_EQ(s.shape(), (Shape{1, 2}));
  EXPECT_NEAR(s[0], 0.30, 1e-15);
  EXPECT_NEAR(s[1], 0.40, 1e-15);
}

TEST(ClassTokenAttention, UniformAttention) {
  const std::size_t n = 4;
  auto s = masking::class_token_attention({Tensor::full({2, 3, n + 1, n + 1}, 1.0 / (n + 1))});
  for (double v : s.values()) EXPECT_DOUBLE_EQ(v, 1.0 / (n + 1));
}

TEST(ClassTokenAttention, SingleHeadIsItsRow) {
  auto s = masking::class_token_attention({Tensor({1, 1, 3, 3}, {0.1, 0.7, 0.2, 0, 0, 0, 0, 0, 0})});
  EXPECT_EQ(vals(s), (std::vector<double>{0.7, 0.2}));
}

TEST(ClassTokenAttention, NoPatchesIsConfigError) {
  EXPECT_THROW(masking::class_token_attention({Tensor::full({1, 1, 1, 1}, 1.0)}), ConfigError);
}

TEST(SelectTopK, Examples) {
  EXPECT_EQ(masking::select_top_k(Tensor({1, 2}, {0.3, 0.4}), 0.5)[0], (std::vector<std::size_t>{1}));
  EXPECT_EQ(masking::select_top_k(Tensor::full({1, 4}, 0.25), 0.5)[0], (std::vector<std::size_t>{0, 1}));
  std::vector<double> big(196);
  std::iota(big.begin(), big.end(), 0.0);
  auto nine = masking::select_top_k(Tensor({1, 196}, big), 0.05)[0];
  EXPECT_EQ(nine.size(), 9u);
  EXPECT_EQ(nine.front(), 187u);
  EXPECT_TRUE(masking::select_top_k(Tensor({1, 4}, {1, 2, 3, 4}), 0.0)[0].empty());
}

TEST(SelectTopK, MatchesSortOracleOnRandomScores) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> n_dist(1, 40);
  std::uniform_real_distribution<double> ratio(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = static_cast<std::size_t>(n_dist(rng));
    const double r = trial % 3 == 0 ? std::vector<double>{0.0, 0.05, 1.0}[trial % 9 / 3] : ratio(rng);
    std::vector<double> s(n);
    // Coarse values force frequent ties.
    for (auto& v : s) v = trial % 2 ? coarse(rng) / 5.0 : ratio(rng);
    auto got = masking::select_top_k(Tensor({1, n}, s), r)[0];
    ASSERT_EQ(got, sort_oracle(s, masking::masked_count(r, n))) << "trial " << trial;
  }
}

TEST(SelectTopK, InvariantUnderPositiveRescaling) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(16), scaled(16);
    for (std::size_t i = 0; i < 16; ++i) s[i] = u(rng);
    const double c = 0.01 + 100.0 * u(rng);
    for (std::size_t i = 0; i < 16; ++i) scaled[i] = c * s[i];
    EXPECT_EQ(masking::select_top_k(Tensor({1, 16}, s), 0.3), masking::select_top_k(Tensor({1, 16}, scaled), 0.3));
  }
}

TEST(ApplyMask, ZeroMaskPartitionsPixels) {
  const std::size_t side = 8, patch = 4;
  auto img = random_images(2, 2, side, 3);
  masking::IndexLists idx{{1, 2}, {0}};
  auto out = masking::apply_mask(img, idx, MaskSpec{0.5, MaskType::kZero, 1.0}, patch, 0);
  EXPECT_EQ(out.masked_indices, idx);
  auto in = img.values();
  auto ov = out.images.values();
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          const std::size_t o = ((b * 2 + c) * side + y) * side + x;
          const bool masked = std::count(idx[b].begin(), idx[b].end(), patch_of(y, x, patch, side)) > 0;
          if (masked) ASSERT_EQ(ov[o], 0.0);
          else ASSERT_EQ(ov[o], in[o]);
        }
      }
    }
  }
}

TEST(ApplyMask, FullRatioZeroesEverything) {
  auto img = random_images(1, 1, 8, 4);
  auto out = masking::apply_mask(img, {{0, 1, 2, 3}}, MaskSpec{1.0, MaskType::kZero, 1.0}, 4, 0);
  for (double v : out.images.values()) EXPECT_EQ(v, 0.0);
}

TEST(ApplyMask, EmptyListsLeaveInputUnchanged) {
  auto img = random_images(2, 1, 8, 4);
  for (auto type : {MaskType::kZero, MaskType::kGaussian}) {
    auto out = masking::apply_mask(img, {{}, {}}, MaskSpec{0.0, type, 1.0}, 4, 9);
    EXPECT_EQ(vals(out.images), vals(img));
  }
}

TEST(ApplyMask, ZeroMaskIsIdempotent) {
  auto img = random_images(1, 1, 8, 4);
  MaskSpec spec{0.5, MaskType::kZero, 1.0};
  auto once = masking::apply_mask(img, {{0, 3}}, spec, 4, 0);
  auto twice = masking::apply_mask(once.images, {{0, 3}}, spec, 4, 0);
  EXPECT_EQ(vals(once.images), vals(twice.images));
}

TEST(ApplyMask, GaussianIsSeededPerSample) {
  auto img = random_images(2, 1, 8, 4);
  MaskSpec spec{0.25, MaskType::kGaussian, 1.0};
  auto a = masking::apply_mask(img, {{1}, {1}}, spec, 4, 10);
  auto b = masking::apply_mask(img, {{1}, {1}}, spec, 4, 10);
  auto c = masking::apply_mask(img, {{1}, {1}}, spec, 4, 11);
  EXPECT_EQ(vals(a.images), vals(b.images));
  EXPECT_NE(vals(a.images), vals(c.images));
  // Sample 1 at seed 10 draws what sample 0 draws at seed 11.
  auto av = a.images.values(), cv = c.images.values();
  std::vector<double> a1(av.begin() + 64, av.end()), c0(cv.begin(), cv.begin() + 64);
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 4; x < 8; ++x) EXPECT_EQ(a1[y * 8 + x], c0[y * 8 + x]);
  }
}

TEST(ApplyMask, GaussianDrawsMatchTheRequestedSpread) {
  auto img = Tensor::zeros({1, 1, 64, 64});
  masking::IndexLists all(1);
  for (std::size_t i = 0; i < 256; ++i) all[0].push_back(i);
  auto out = masking::apply_mask(img, all, MaskSpec{1.0, MaskType::kGaussian, 2.0}, 4, 1);
  double sum = 0.0, sq = 0.0;
  for (double v : out.images.values()) sum += v, sq += v * v;
  const double n = 4096.0, mean = sum / n;
  EXPECT_NEAR(mean, 0.0, 0.15);
  EXPECT_NEAR(std::sqrt(sq / n - mean * mean), 2.0, 0.1);
}

TEST(ApplyMask, IndexOutOfRangeIsIndexError) {
  auto img = random_images(1, 1, 8, 4);
  EXPECT_THROW(masking::apply_mask(img, {{4}}, MaskSpec{}, 4, 0), IndexError);
}

TEST(MaskSpec, ValidateAndParse) {
  EXPECT_THROW((MaskSpec{1.5, MaskType::kZero, 1.0}.validate()), ConfigError);
  EXPECT_THROW((MaskSpec{-0.1, MaskType::kZero, 1.0}.validate()), ConfigError);
  EXPECT_THROW((MaskSpec{0.1, MaskType::kGaussian, -1.0}.validate()), ConfigError);
  EXPECT_EQ(masking::parse_mask_type("zero"), MaskType::kZero);
  EXPECT_EQ(masking::parse_mask_type("gaussian"), MaskType::kGaussian);
  EXPECT_THROW(masking::parse_mask_type("blur"), ConfigError);
  EXPECT_EQ(masking::to_string(MaskType::kGaussian), "gaussian");
}

TEST(BuildMaskedView, MatchesBruteForceOverAttention) {
  auto c = check::tiny_config();
  c.image_size = 16;  // 16 patches
  auto p = check::random_params(c, 12, 1.0);
  auto img = random_images(5, 1, 16, 13);
  Tape tape(Tape::Mode::kInference);
  auto attn = vit::forward(tape, p, img, true).last_attention->weights;
  const std::size_t h = c.heads, t = c.tokens(), n = c.num_patches();
  for (double ratio : {0.05, 0.1, 0.25, 0.5}) {
    auto view = masking::build_masked_view(p, img, MaskSpec{ratio, MaskType::kZero, 1.0});
    const std::size_t k = masking::masked_count(ratio, n);
    for (std::size_t b = 0; b < 5; ++b) {
      std::vector<double> score(n, 0.0);
      for (std::size_t hh = 0; hh < h; ++hh) {
        for (std::size_t i = 0; i < n; ++i) score[i] += attn[((b * h + hh) * t + 0) * t + i + 1] / h;
      }
      // Exhaustive: a patch is selected iff fewer than k patches beat it.
      std::vector<std::size_t> expect;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t ahead = 0;
        for (std::size_t j = 0; j < n; ++j) ahead += score[j] > score[i] || (score[j] == score[i] && j < i);
        if (ahead < k) expect.push_back(i);
      }
      ASSERT_EQ(view.masked_indices[b], expect) << "ratio " << ratio << " sample " << b;
    }
  }
}

TEST(BuildMaskedView, UniformAttentionPicksFirstPatches) {
  auto c = check::tiny_config();
  c.image_size = 16;
  auto p = check::random_params(c, 12);
  for (auto& blk : p.blocks) {
    blk.wq = Tensor::zeros(blk.wq.shape());
    blk.wk = Tensor::zeros(blk.wk.shape());
  }
  auto view = masking::build_masked_view(p, random_images(2, 1, 16, 1), MaskSpec{0.25, MaskType::kZero, 1.0});
  for (const auto& l : view.masked_indices) EXPECT_EQ(l, (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(BuildMaskedView, ChunkingDoesNotChangeTheResult) {
  auto c = check::tiny_config();
  auto p = check::random_params(c, 2);
  auto img = random_images(7, 1, 8, 2);
  MaskSpec spec{0.5, MaskType::kGaussian, 1.0};
  auto whole = masking::build_masked_view(p, img, spec, 3, 64);
  auto chunked = masking::build_masked_view(p, img, spec, 3, 2);
  EXPECT_EQ(whole.masked_indices, chunked.masked_indices);
  EXPECT_EQ(vals(whole.images), vals(chunked.images));
}

TEST(BuildMaskedView, ZeroRatioIsIdentity) {
  auto c = check::tiny_config();
  auto p = check::random_params(c, 2);
  auto img = random_images(3, 1, 8, 2);
  auto view = masking::build_masked_view(p, img, MaskSpec{0.0, MaskType::kGaussian, 1.0});
  EXPECT_EQ(vals(view.images), vals(img));
  for (const auto& l : view.masked_indices) EXPECT_TRUE(l.empty());
}
