#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tensor/tensor.hpp"

// Differentiable operations. Every op takes the tape it records onto; pass an
// inference tape to evaluate without building a graph. Shapes are explicit:
// the only broadcast is add_bias over the trailing dimension.
namespace lethe::ops {

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double factor);

// x[..., n] + bias[n]
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);

// a[m x k] . b[k x n]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// x[m x k] . w[k x n] + bias[n]
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor transpose(Tape& tape, const Tensor& x);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

// Rank-2 concatenation along axis 0 (rows) or 1 (columns).
Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis);
// Rank-2 slice of `count` rows (axis 0) or columns (axis 1) starting at `start`.
Tensor slice(Tape& tape, const Tensor& x, std::size_t axis, std::size_t start, std::size_t count);
// x[index, ...] along the leading axis; result drops that axis.
Tensor select(Tape& tape, const Tensor& x, std::size_t index);

Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);

// Row-wise normalisation over the trailing dimension.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
// Exact erf form.
Tensor gelu(Tape& tape, const Tensor& x);
Tensor softmax_rows(Tape& tape, const Tensor& x);
// log(1 + e^x), computed without overflow.
Tensor softplus(Tape& tape, const Tensor& x);

// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels);

inline constexpr double kMinNorm = 1e-12;

// u.v / (|u| |v|) for two rank-1 tensors of equal length.
Tensor cosine_similarity(Tape& tape, const Tensor& u, const Tensor& v);
// Cosine similarity of matching rows: a[B x n], b[B x n] -> [B].
Tensor row_cosine(Tape& tape, const Tensor& a, const Tensor& b);

// Scaled dot-product self-attention for every head over `groups` independent
// sequences stacked row-wise: x[groups * tokens x D], wq/wk/wv[H x D x d].
// Head h of a sequence is softmax(Q_h K_h^T / sqrt(d)) V_h with Q_h = x wq[h];
// heads are concatenated along columns, giving [groups * tokens x H * d].
// When `weights` is non-null it receives the softmax weights laid out as
// [groups x H x tokens x tokens].
Tensor self_attention(Tape& tape, const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                      std::size_t tokens, std::vector<double>* weights = nullptr);

}  // namespace lethe::ops
