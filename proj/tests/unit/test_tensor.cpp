#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "common/error.hpp"
#include "support/op_cases.hpp"
#include "tensor/checkpoint.hpp"
#include "tensor/ops.hpp"

using namespace lethe;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(Tensor, RejectsMismatchedShape) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), DimensionError);
}

TEST(Tensor, RejectsNonFinite) {
  EXPECT_THROW(Tensor::vector({1.0, std::nan("")}), NumericError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tape tape;
  auto id = Tensor::matrix(2, 2, {1, 0, 0, 1});
  auto m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(vals(ops::matmul(tape, id, m)), vals(m));
}

TEST(Matmul, SmallProduct) {
  Tape tape;
  auto out = ops::matmul(tape, Tensor::matrix(2, 2, {1, 2, 3, 4}), Tensor::matrix(2, 1, {0, 1}));
  EXPECT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_EQ(vals(out), (std::vector<double>{2, 4}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  Tape tape;
  try {
    ops::matmul(tape, Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("by [2x3]"), std::string::npos);
  }
}

TEST(Softmax, ZerosAreUniform) {
  Tape tape;
  auto out = ops::softmax_rows(tape, Tensor::zeros({1, 4}));
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, ClosedForm) {
  Tape tape;
  auto out = ops::softmax_rows(tape, Tensor::matrix(1, 2, {0.0, std::log(3.0)}));
  EXPECT_NEAR(out[0], 0.25, 1e-15);
  EXPECT_NEAR(out[1], 0.75, 1e-15);
}

TEST(Softmax, LargeInputsDoNotOverflow) {
  Tape tape;
  auto out = ops::softmax_rows(tape, Tensor::matrix(1, 3, {1e9, 0.0, -5.0}));
  EXPECT_NEAR(out[0] + out[1] + out[2], 1.0, 1e-12);
}

TEST(Softmax, EmptyRowIsDimensionError) {
  Tape tape;
  EXPECT_THROW(ops::softmax_rows(tape, Tensor::zeros({2, 0})), DimensionError);
}

TEST(Softmax, RowsAreDistributions) {
  std::mt19937_64 rng(3);
  Tape tape(Tape::Mode::kInference);
  for (int trial = 0; trial < 50; ++trial) {
    auto out = ops::softmax_rows(tape, check::random_tensor({4, 7}, rng, -30.0, 30.0));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        double v = out[r * 7 + c];
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Cosine, IdentityAntipodalOrthogonal) {
  Tape tape;
  auto u = Tensor::vector({1.0, -2.0, 0.5});
  auto neg = Tensor::vector({-1.0, 2.0, -0.5});
  EXPECT_NEAR(ops::cosine_similarity(tape, u, u).item(), 1.0, 1e-15);
  EXPECT_NEAR(ops::cosine_similarity(tape, u, neg).item(), -1.0, 1e-15);
  EXPECT_EQ(ops::cosine_similarity(tape, Tensor::vector({1, 0}), Tensor::vector({0, 1})).item(), 0.0);
}

TEST(Cosine, ZeroNormIsDegenerate) {
  Tape tape;
  EXPECT_THROW(ops::cosine_similarity(tape, Tensor::vector({0, 0}), Tensor::vector({1, 0})), DegenerateError);
  EXPECT_THROW(ops::row_cosine(tape, Tensor::matrix(1, 2, {1, 1}), Tensor::matrix(1, 2, {0, 0})), DegenerateError);
}

TEST(Cosine, StaysInRange) {
  std::mt19937_64 rng(5);
  Tape tape(Tape::Mode::kInference);
  for (int trial = 0; trial < 200; ++trial) {
    auto u = check::random_tensor({6}, rng, -1e3, 1e3);
    auto v = trial % 2 ? u : check::random_tensor({6}, rng);
    double c = ops::cosine_similarity(tape, u, v).item();
    EXPECT_GE(c, -1.0 - 1e-9);
    EXPECT_LE(c, 1.0 + 1e-9);
  }
}

TEST(CrossEntropy, UniformLogits) {
  Tape tape;
  std::vector<int> labels{7};
  EXPECT_NEAR(ops::cross_entropy(tape, Tensor::zeros({1, 10}), labels).item(), std::log(10.0), 1e-12);
}

TEST(CrossEntropy, ConfidentCorrectIsNearZero) {
  Tape tape;
  std::vector<int> labels{1};
  EXPECT_NEAR(ops::cross_entropy(tape, Tensor::matrix(1, 3, {0, 1e6, 0}), labels).item(), 0.0, 1e-12);
}

TEST(CrossEntropy, ClosedForm) {
  Tape tape;
  std::vector<int> labels{1};
  EXPECT_NEAR(ops::cross_entropy(tape, Tensor::matrix(1, 2, {1, 2}), labels).item(), 0.313261687518223, 1e-12);
}

TEST(CrossEntropy, LabelOutOfRangeNamesIndex) {
  Tape tape;
  std::vector<int> labels{0, 3};
  try {
    ops::cross_entropy(tape, Tensor::zeros({2, 3}), labels);
    FAIL() << "expected LabelError";
  } catch (const LabelError& e) {
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos);
  }
}

TEST(Backward, SquareHasGradientSix) {
  Tape tape;
  auto x = Tensor::scalar(3.0, true);
  tape.backward(ops::mul(tape, x, x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape tape;
  auto x = Tensor::vector({1, 2}, true);
  EXPECT_THROW(tape.backward(ops::scale(tape, x, 2.0)), ContractError);
}

TEST(Backward, DetachedParameterGetsZeroGradient) {
  Tape tape;
  auto x = Tensor::vector({1, 2}, true);
  auto y = Tensor::vector({3, 4}, true);
  tape.backward(ops::sum(tape, ops::mul(tape, x, x)));
  for (double g : y.grad()) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, SumOfMatmulMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  auto res = check::grad_check(
      [](Tape& t, const std::vector<Tensor>& x) { return ops::sum(t, ops::matmul(t, x[0], x[1])); },
      {check::random_tensor({3, 3}, rng), check::random_tensor({3, 3}, rng)});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Backward, InferenceTapeRecordsNothing) {
  Tape tape(Tape::Mode::kInference);
  auto x = Tensor::vector({1, 2}, true);
  auto y = ops::scale(tape, x, 2.0);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, NumericOverflowIsReported) {
  Tape tape;
  auto x = Tensor::vector({1e300}, true);
  EXPECT_THROW(ops::mul(tape, x, x), NumericError);
}

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  auto cases = check::op_cases();
  const auto& c = cases[GetParam()];
  auto res = check::grad_check(c.fn, c.inputs);
  EXPECT_LT(res.max_rel_error, 1e-4) << c.name << " input " << res.worst_input;
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, check::op_cases().size()),
                         [](const auto& info) { return check::op_cases()[info.param].name; });

TEST(Ops, SliceSelectConcatShapes) {
  Tape tape;
  auto x = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(vals(ops::slice(tape, x, 1, 1, 2)), (std::vector<double>{2, 3, 5, 6}));
  EXPECT_EQ(vals(ops::select(tape, x, 1)), (std::vector<double>{4, 5, 6}));
  EXPECT_EQ(vals(ops::concat(tape, {x, x}, 1)), (std::vector<double>{1, 2, 3, 1, 2, 3, 4, 5, 6, 4, 5, 6}));
  EXPECT_THROW(ops::slice(tape, x, 1, 2, 2), IndexError);
  EXPECT_THROW(ops::add(tape, x, Tensor::zeros({3, 2})), DimensionError);
}

TEST(Ops, GeluKnownValues) {
  Tape tape;
  auto out = ops::gelu(tape, Tensor::vector({0.0, 1.0, -1.0}));
  EXPECT_EQ(out[0], 0.0);
  EXPECT_NEAR(out[1], 0.8413447460685429, 1e-12);
  EXPECT_NEAR(out[2], -0.15865525393145707, 1e-12);
}

TEST(Ops, LayerNormNormalizesRows) {
  Tape tape;
  auto out = ops::layer_norm(tape, Tensor::matrix(1, 4, {1, 2, 3, 4}), Tensor::full({4}, 1.0), Tensor::zeros({4}));
  double mean = 0.0, var = 0.0;
  for (double v : out.values()) mean += v / 4;
  for (double v : out.values()) var += (v - mean) * (v - mean) / 4;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(var, 1.0, 1e-5);
}

TEST(Take, GathersRowsAndChecksRange) {
  auto x = Tensor({3, 2}, {1, 2, 3, 4, 5, 6});
  std::vector<std::size_t> idx{2, 0};
  EXPECT_EQ(vals(take(x, idx)), (std::vector<double>{5, 6, 1, 2}));
  std::vector<std::size_t> bad{3};
  EXPECT_THROW(take(x, bad), IndexError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  std::vector<NamedTensor> tensors{{"a", Tensor({2, 2}, {0.5, -1.25, 3.0, 4.0})}, {"b.c", Tensor::vector({7.0})}};
  auto bytes = encode_checkpoint(tensors);
  auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "a");
  EXPECT_EQ(back[0].tensor.shape(), (Shape{2, 2}));
  EXPECT_EQ(vals(back[0].tensor), vals(tensors[0].tensor));
  EXPECT_EQ(encode_checkpoint(back), bytes);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);

  auto bad_version = bytes;
  bad_version[4] = 2;
  try {
    decode_checkpoint(bad_version);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("offset 4"), std::string::npos);
  }

  auto bad_sum = bytes;
  bad_sum.back() ^= 0x01;
  EXPECT_THROW(decode_checkpoint(bad_sum), FormatError);

  auto truncated = std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 12);
  EXPECT_THROW(decode_checkpoint(truncated), FormatError);
}

TEST(Checkpoint, FileRoundTrip) {
  auto path = std::filesystem::temp_directory_path() / "lethe_ckpt_test.ltvt";
  std::vector<NamedTensor> tensors{{"w", Tensor::vector({1.5, 2.5})}};
  save_checkpoint(path, tensors);
  auto back = load_checkpoint(path);
  EXPECT_EQ(vals(back[0].tensor), vals(tensors[0].tensor));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), IoError);
}

namespace {

// Per-sequence, per-head composition of the basic ops.
Tensor attention_by_parts(Tape& tape, const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                          std::size_t tokens) {
  const std::size_t groups = x.dim(0) / tokens, heads = wq.dim(0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(wq.dim(2)));
  std::vector<Tensor> rows;
  for (std::size_t g = 0; g < groups; ++g) {
    auto xs = ops::slice(tape, x, 0, g * tokens, tokens);
    std::vector<Tensor> cols;
    for (std::size_t h = 0; h < heads; ++h) {
      auto q = ops::matmul(tape, xs, ops::select(tape, wq, h));
      auto k = ops::matmul(tape, xs, ops::select(tape, wk, h));
      auto v = ops::matmul(tape, xs, ops::select(tape, wv, h));
      auto a = ops::softmax_rows(tape, ops::scale(tape, ops::matmul(tape, q, ops::transpose(tape, k)), scale));
      cols.push_back(ops::matmul(tape, a, v));
    }
    rows.push_back(ops::concat(tape, cols, 1));
  }
  return ops::concat(tape, rows, 0);
}

}  // namespace

TEST(SelfAttention, MatchesCompositionOfBasicOps) {
  std::mt19937_64 rng(17);
  auto x = check::random_tensor({10, 6}, rng);
  auto wq = check::random_tensor({3, 6, 2}, rng), wk = check::random_tensor({3, 6, 2}, rng),
       wv = check::random_tensor({3, 6, 2}, rng);
  Tape tape(Tape::Mode::kInference);
  std::vector<double> weights;
  auto fused = ops::self_attention(tape, x, wq, wk, wv, 5, &weights);
  auto parts = attention_by_parts(tape, x, wq, wk, wv, 5);
  ASSERT_EQ(fused.shape(), parts.shape());
  for (std::size_t i = 0; i < fused.numel(); ++i) EXPECT_NEAR(fused[i], parts[i], 1e-12);
  EXPECT_EQ(weights.size(), 2u * 3u * 5u * 5u);
}

TEST(SelfAttention, RejectsRaggedSequences) {
  Tape tape;
  auto w = Tensor::zeros({1, 4, 2});
  EXPECT_THROW(ops::self_attention(tape, Tensor::zeros({7, 4}), w, w, w, 3), DimensionError);
  EXPECT_THROW(ops::self_attention(tape, Tensor::zeros({6, 3}), w, w, w, 3), DimensionError);
}
