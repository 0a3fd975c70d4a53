#include "tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Core>

#include "common/error.hpp"

namespace lethe::ops {
namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(x.shape()));
  }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using Strided = Eigen::OuterStride<>;
using ConstBlock = Eigen::Map<const RowMat, 0, Strided>;
using MutBlock = Eigen::Map<RowMat, 0, Strided>;

// c[m x n] += a[m x k] . b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MutMap(c, M, N).noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
}

// c[m x k] += g[m x n] . b[k x n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MutMap(c, M, K).noalias() += ConstMap(g, M, N) * ConstMap(b, K, N).transpose();
}

// c[k x n] += a[m x k]^T . g[m x n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MutMap(c, K, N).noalias() += ConstMap(a, M, K).transpose() * ConstMap(g, M, N);
}

std::size_t trailing(const Tensor& x) { return x.rank() == 0 ? 1 : x.shape().back(); }

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record("add", a.shape(), std::move(out), {a, b},
                     [](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       for (auto* slot : in) {
                         if (!slot) continue;
                         for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
                       }
                     });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return tape.record("sub", a.shape(), std::move(out), {a, b},
                     [](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       if (in[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                       if (in[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i];
                     });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record("mul", a.shape(), std::move(out), {a, b},
                     [a, b](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       auto av = a.values();
                       auto bv = b.values();
                       if (in[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * bv[i];
                       if (in[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * av[i];
                     });
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return tape.record("scale", x.shape(), std::move(out), {x},
                     [factor](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       if (in[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * factor;
                     });
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  require_rank("add_bias", bias, 1);
  const std::size_t n = bias.dim(0);
  if (x.rank() == 0 || x.shape().back() != n) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match trailing dimension of " +
                         shape_string(x.shape()));
  }
  auto xv = x.values();
  auto bv = bias.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % n];
  return tape.record("add_bias", x.shape(), std::move(out), {x, bias},
                     [n](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       if (in[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                       if (in[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i % n] += g[i];
                     });
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return tape.record("matmul", {m, n}, std::move(out), {a, b},
                     [a, b, m, k, n](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       if (in[0]) gemm_nt(g.data(), b.values().data(), in[0]->data(), m, n, k);
                       if (in[1]) gemm_tn(a.values().data(), g.data(), in[1]->data(), m, k, n);
                     });
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0)) {
    throw DimensionError("linear: cannot apply weight " + shape_string(weight.shape()) + " to input " +
                         shape_string(x.shape()));
  }
  require_rank("linear", bias, 1);
  const std::size_t m = x.dim(0), k = x.dim(1), n = weight.dim(1);
  if (bias.dim(0) != n) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " does not match output width " +
                         std::to_string(n));
  }
  std::vector<double> out(m * n);
  auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i) std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
  gemm_nn(x.values().data(), weight.values().data(), out.data(), m, k, n);
  return tape.record("linear", {m, n}, std::move(out), {x, weight, bias},
                     [x, weight, m, k, n](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       if (in[0]) gemm_nt(g.data(), weight.values().data(), in[0]->data(), m, n, k);
                       if (in[1]) gemm_tn(x.values().data(), g.data(), in[1]->data(), m, k, n);
                       if (in[2]) {
                         auto& gb = *in[2];
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                       }
                     });
}

Tensor transpose(Tape& tape, const Tensor& x) {
  require_rank("transpose", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  auto xv = x.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return tape.record("transpose", {c, r}, std::move(out), {x},
                     [r, c](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       if (!in[0]) return;
                       auto& gx = *in[0];
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
                     });
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  auto xv = x.values();
  return tape.record("reshape", std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                     [](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       if (in[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                     });
}

Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1, got " + std::to_string(axis));
  for (const auto& p : parts) require_rank("concat", p, 2);
  const std::size_t fixed = parts[0].dim(1 - axis);
  std::size_t total = 0;
  std::vector<std::size_t> extents;
  extents.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.dim(1 - axis) != fixed) {
      throw DimensionError("concat: " + shape_string(p.shape()) + " does not line up with " +
                           shape_string(parts[0].shape()) + " along axis " + std::to_string(axis));
    }
    extents.push_back(p.dim(axis));
    total += p.dim(axis);
  }

  Shape shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  std::vector<double> out(total * fixed);
  if (axis == 0) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      auto pv = p.values();
      std::copy(pv.begin(), pv.end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += pv.size();
    }
  } else {
    std::size_t col = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      auto pv = parts[pi].values();
      const std::size_t w = extents[pi];
      for (std::size_t r = 0; r < fixed; ++r)
        for (std::size_t j = 0; j < w; ++j) out[r * total + col + j] = pv[r * w + j];
      col += w;
    }
  }

  return tape.record("concat", std::move(shape), std::move(out), parts,
                     [axis, fixed, total, extents](std::span<const double>, std::span<const double> g,
                                                   Tape::GradSlots in) {
                       std::size_t offset = 0;
                       for (std::size_t pi = 0; pi < in.size(); ++pi) {
                         const std::size_t w = extents[pi];
                         if (in[pi]) {
                           auto& gp = *in[pi];
                           if (axis == 0) {
                             for (std::size_t i = 0; i < w * fixed; ++i) gp[i] += g[offset * fixed + i];
                           } else {
                             for (std::size_t r = 0; r < fixed; ++r)
                               for (std::size_t j = 0; j < w; ++j) gp[r * w + j] += g[r * total + offset + j];
                           }
                         }
                         offset += w;
                       }
                     });
}

Tensor slice(Tape& tape, const Tensor& x, std::size_t axis, std::size_t start, std::size_t count) {
  require_rank("slice", x, 2);
  if (axis > 1) throw DimensionError("slice: axis must be 0 or 1, got " + std::to_string(axis));
  if (start + count > x.dim(axis)) {
    throw IndexError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") exceeds axis " + std::to_string(axis) + " of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  auto xv = x.values();
  if (axis == 0) {
    std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(start * cols),
                            xv.begin() + static_cast<std::ptrdiff_t>((start + count) * cols));
    return tape.record("slice", {count, cols}, std::move(out), {x},
                       [start, cols](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                         if (in[0])
                           for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[start * cols + i] += g[i];
                       });
  }
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < count; ++j) out[r * count + j] = xv[r * cols + start + j];
  return tape.record("slice", {rows, count}, std::move(out), {x},
                     [start, rows, cols, count](std::span<const double>, std::span<const double> g,
                                                Tape::GradSlots in) {
                       if (!in[0]) return;
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < count; ++j) (*in[0])[r * cols + start + j] += g[r * count + j];
                     });
}

Tensor select(Tape& tape, const Tensor& x, std::size_t index) {
  if (x.rank() == 0) throw DimensionError("select: cannot index a scalar");
  if (index >= x.dim(0)) {
    throw DimensionError("select: index " + std::to_string(index) + " out of range for " + shape_string(x.shape()));
  }
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t stride = shape_numel(shape);
  auto xv = x.values();
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(index * stride),
                          xv.begin() + static_cast<std::ptrdiff_t>((index + 1) * stride));
  return tape.record("select", std::move(shape), std::move(out), {x},
                     [index, stride](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       if (in[0])
                         for (std::size_t i = 0; i < stride; ++i) (*in[0])[index * stride + i] += g[i];
                     });
}

Tensor sum(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return tape.record("sum", {}, {acc}, {x},
                     [](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       if (!in[0]) return;
                       for (auto& v : *in[0]) v += g[0];
                     });
}

Tensor mean(Tape& tape, const Tensor& x) {
  const std::size_t n = x.numel();
  if (n == 0) throw DimensionError("mean: empty tensor");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return tape.record("mean", {}, {acc / static_cast<double>(n)}, {x},
                     [n](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       if (!in[0]) return;
                       const double share = g[0] / static_cast<double>(n);
                       for (auto& v : *in[0]) v += share;
                     });
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank("layer_norm", gamma, 1);
  require_same_shape("layer_norm", gamma, beta);
  const std::size_t n = gamma.dim(0);
  if (x.rank() == 0 || x.shape().back() != n) {
    throw DimensionError("layer_norm: parameters " + shape_string(gamma.shape()) +
                         " do not match trailing dimension of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();

  // normalised activations and per-row inverse std are reused by backward
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }

  return tape.record(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [gamma, xhat, inv_std, rows, n](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
        auto gv = gamma.values();
        const auto& h = *xhat;
        if (in[1] || in[2]) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) {
              if (in[1]) (*in[1])[j] += g[r * n + j] * h[r * n + j];
              if (in[2]) (*in[2])[j] += g[r * n + j];
            }
        }
        if (!in[0]) return;
        auto& gx = *in[0];
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dh = g[r * n + j] * gv[j];
            sum_dh += dh;
            sum_dh_h += dh * h[r * n + j];
          }
          const double is = (*inv_std)[r];
          for (std::size_t j = 0; j < n; ++j) {
            const double dh = g[r * n + j] * gv[j];
            gx[r * n + j] += is * (dh - inv_n * sum_dh - h[r * n + j] * inv_n * sum_dh_h);
          }
        }
      });
}

Tensor gelu(Tape& tape, const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
  }
  return tape.record("gelu", x.shape(), std::move(out), {x},
                     [x](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       if (!in[0]) return;
                       auto xv = x.values();
                       const double inv_sqrt_2pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
                       for (std::size_t i = 0; i < xv.size(); ++i) {
                         const double cdf = 0.5 * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
                         const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv[i] * xv[i]);
                         (*in[0])[i] += g[i] * (cdf + xv[i] * pdf);
                       }
                     });
}

Tensor softmax_rows(Tape& tape, const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw DimensionError("softmax_rows: last dimension must be at least 1, got shape " + shape_string(x.shape()));
  }
  const std::size_t n = trailing(x);
  const std::size_t rows = x.numel() / n;
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  return tape.record("softmax_rows", x.shape(), std::move(out), {x},
                     [rows, n](std::span<const double> y, std::span<const double> g, Tape::GradSlots in) {
                       if (!in[0]) return;
                       auto& gx = *in[0];
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
                         for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
                       }
                     });
}

Tensor softplus(Tape& tape, const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = std::max(xv[i], 0.0) + std::log1p(std::exp(-std::abs(xv[i])));
  }
  return tape.record("softplus", x.shape(), std::move(out), {x},
                     [x](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       if (!in[0]) return;
                       auto xv = x.values();
                       for (std::size_t i = 0; i < xv.size(); ++i) {
                         // logistic sigmoid, evaluated on the non-overflowing branch
                         const double e = std::exp(-std::abs(xv[i]));
                         const double s = xv[i] >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
                         (*in[0])[i] += g[i] * s;
                       }
                     });
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_string(logits.shape()));
  }
  if (batch == 0 || classes == 0) throw DimensionError("cross_entropy: empty logits " + shape_string(logits.shape()));
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw LabelError("cross_entropy: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                       " outside [0, " + std::to_string(classes) + ")");
    }
  }
  auto lv = logits.values();
  auto probs = std::make_shared<std::vector<double>>(lv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = lv.data() + i * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < classes; ++j) (*probs)[i * classes + j] = std::exp(row[j] - log_z);
    total += log_z - row[labels[i]];
  }
  std::vector<int> owned(labels.begin(), labels.end());
  return tape.record("cross_entropy", {}, {total / static_cast<double>(batch)}, {logits},
                     [probs, owned, batch, classes](std::span<const double>, std::span<const double> g,
                                                    Tape::GradSlots in) {
                       if (!in[0]) return;
                       const double share = g[0] / static_cast<double>(batch);
                       auto& gl = *in[0];
                       for (std::size_t i = 0; i < batch; ++i) {
                         for (std::size_t j = 0; j < classes; ++j) {
                           double d = (*probs)[i * classes + j];
                           if (static_cast<int>(j) == owned[i]) d -= 1.0;
                           gl[i * classes + j] += share * d;
                         }
                       }
                     });
}

namespace {

struct RowCosine {
  std::vector<double> cos, norm_a, norm_b;
};

RowCosine row_cosine_values(const char* op, std::span<const double> a, std::span<const double> b, std::size_t rows,
                            std::size_t n) {
  RowCosine rc{std::vector<double>(rows), std::vector<double>(rows), std::vector<double>(rows)};
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dot += a[r * n + j] * b[r * n + j];
      na += a[r * n + j] * a[r * n + j];
      nb += b[r * n + j] * b[r * n + j];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < kMinNorm || nb < kMinNorm) {
      throw DegenerateError(std::string(op) + ": vector norm below 1e-12 in row " + std::to_string(r));
    }
    rc.cos[r] = dot / (na * nb);
    rc.norm_a[r] = na;
    rc.norm_b[r] = nb;
  }
  return rc;
}

// d cos / d a = b/(|a||b|) - cos * a/|a|^2, symmetric for b.
void row_cosine_backward(std::span<const double> a, std::span<const double> b, const RowCosine& rc,
                         std::span<const double> g, Tape::GradSlots in, std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double na = rc.norm_a[r], nb = rc.norm_b[r], c = rc.cos[r];
    for (std::size_t j = 0; j < n; ++j) {
      const double av = a[r * n + j], bv = b[r * n + j];
      if (in[0]) (*in[0])[r * n + j] += g[r] * (bv / (na * nb) - c * av / (na * na));
      if (in[1]) (*in[1])[r * n + j] += g[r] * (av / (na * nb) - c * bv / (nb * nb));
    }
  }
}

}  // namespace

Tensor cosine_similarity(Tape& tape, const Tensor& u, const Tensor& v) {
  require_rank("cosine_similarity", u, 1);
  require_same_shape("cosine_similarity", u, v);
  const std::size_t n = u.dim(0);
  auto rc = std::make_shared<RowCosine>(row_cosine_values("cosine_similarity", u.values(), v.values(), 1, n));
  const double c = rc->cos[0];
  return tape.record("cosine_similarity", {}, {c}, {u, v},
                     [u, v, rc, n](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       row_cosine_backward(u.values(), v.values(), *rc, g, in, 1, n);
                     });
}

Tensor row_cosine(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank("row_cosine", a, 2);
  require_same_shape("row_cosine", a, b);
  const std::size_t rows = a.dim(0), n = a.dim(1);
  auto rc = std::make_shared<RowCosine>(row_cosine_values("row_cosine", a.values(), b.values(), rows, n));
  std::vector<double> out = rc->cos;
  return tape.record("row_cosine", {rows}, std::move(out), {a, b},
                     [a, b, rc, rows, n](std::span<const double>, std::span<const double> g, Tape::GradSlots in) {
                       row_cosine_backward(a.values(), b.values(), *rc, g, in, rows, n);
                     });
}

namespace {

// [H x D x d] -> [D x H*d], head h occupying columns [h*d, (h+1)*d).
std::vector<double> pack_heads(std::span<const double> w, std::size_t heads, std::size_t dim, std::size_t hd) {
  std::vector<double> out(dim * heads * hd);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t r = 0; r < dim; ++r)
      for (std::size_t j = 0; j < hd; ++j) out[r * heads * hd + h * hd + j] = w[(h * dim + r) * hd + j];
  return out;
}

void unpack_heads_add(const std::vector<double>& packed, std::vector<double>& w, std::size_t heads, std::size_t dim,
                      std::size_t hd) {
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t r = 0; r < dim; ++r)
      for (std::size_t j = 0; j < hd; ++j) w[(h * dim + r) * hd + j] += packed[r * heads * hd + h * hd + j];
}

struct AttentionCache {
  std::vector<double> wq, wk, wv;  // packed [D x H*d]
  std::vector<double> q, k, v;     // [R x H*d]
  std::vector<double> probs;       // [G x H x T x T]
};

}  // namespace

Tensor self_attention(Tape& tape, const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                      std::size_t tokens, std::vector<double>* weights) {
  require_rank("self_attention", x, 2);
  require_rank("self_attention", wq, 3);
  require_same_shape("self_attention", wq, wk);
  require_same_shape("self_attention", wq, wv);
  const std::size_t rows = x.dim(0), dim = x.dim(1), heads = wq.dim(0), hd = wq.dim(2), width = heads * hd;
  if (wq.dim(1) != dim) {
    throw DimensionError("self_attention: weights " + shape_string(wq.shape()) + " do not match input " +
                         shape_string(x.shape()));
  }
  if (tokens == 0 || rows % tokens != 0) {
    throw DimensionError("self_attention: " + std::to_string(rows) + " rows are not a multiple of " +
                         std::to_string(tokens) + " tokens");
  }
  if (heads == 0 || hd == 0) throw DimensionError("self_attention: empty head dimension");
  const std::size_t groups = rows / tokens;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto R = static_cast<Eigen::Index>(rows), D = static_cast<Eigen::Index>(dim),
             W = static_cast<Eigen::Index>(width), T = static_cast<Eigen::Index>(tokens),
             Hd = static_cast<Eigen::Index>(hd);

  auto cache = std::make_shared<AttentionCache>();
  cache->wq = pack_heads(wq.values(), heads, dim, hd);
  cache->wk = pack_heads(wk.values(), heads, dim, hd);
  cache->wv = pack_heads(wv.values(), heads, dim, hd);
  const ConstMap xm(x.values().data(), R, D);
  for (auto [w, out] : {std::pair{&cache->wq, &cache->q}, {&cache->wk, &cache->k}, {&cache->wv, &cache->v}}) {
    out->resize(rows * width);
    MutMap(out->data(), R, W).noalias() = xm * ConstMap(w->data(), D, W);
  }

  cache->probs.resize(groups * heads * tokens * tokens);
  std::vector<double> out(rows * width);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = g * tokens * width + h * hd;
      const ConstBlock q(cache->q.data() + off, T, Hd, Strided(W));
      const ConstBlock k(cache->k.data() + off, T, Hd, Strided(W));
      const ConstBlock v(cache->v.data() + off, T, Hd, Strided(W));
      MutMap p(cache->probs.data() + (g * heads + h) * tokens * tokens, T, T);
      p.noalias() = (q * k.transpose()) * scale;
      for (Eigen::Index r = 0; r < T; ++r) {
        auto row = p.row(r);
        row = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
      }
      MutBlock(out.data() + off, T, Hd, Strided(W)).noalias() = p * v;
    }
  }
  if (weights) *weights = cache->probs;

  return tape.record(
      "self_attention", {rows, width}, std::move(out), {x, wq, wk, wv},
      [x, cache, rows, dim, heads, hd, width, groups, tokens, scale](std::span<const double>,
                                                                    std::span<const double> g,
                                                                    Tape::GradSlots in) {
        const auto R = static_cast<Eigen::Index>(rows), D = static_cast<Eigen::Index>(dim),
                   W = static_cast<Eigen::Index>(width), T = static_cast<Eigen::Index>(tokens),
                   Hd = static_cast<Eigen::Index>(hd);
        std::vector<double> dq(rows * width, 0.0), dk(rows * width, 0.0), dv(rows * width, 0.0);
        RowMat da(T, T);
        for (std::size_t grp = 0; grp < groups; ++grp) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = grp * tokens * width + h * hd;
            const ConstBlock q(cache->q.data() + off, T, Hd, Strided(W));
            const ConstBlock k(cache->k.data() + off, T, Hd, Strided(W));
            const ConstBlock v(cache->v.data() + off, T, Hd, Strided(W));
            const ConstBlock go(g.data() + off, T, Hd, Strided(W));
            const ConstMap p(cache->probs.data() + (grp * heads + h) * tokens * tokens, T, T);
            MutBlock(dv.data() + off, T, Hd, Strided(W)).noalias() = p.transpose() * go;
            da.noalias() = go * v.transpose();
            for (Eigen::Index r = 0; r < T; ++r) {
              const double dot = da.row(r).dot(p.row(r));
              da.row(r) = (p.row(r).array() * (da.row(r).array() - dot)) * scale;
            }
            MutBlock(dq.data() + off, T, Hd, Strided(W)).noalias() = da * k;
            MutBlock(dk.data() + off, T, Hd, Strided(W)).noalias() = da.transpose() * q;
          }
        }
        const ConstMap xm(x.values().data(), R, D);
        const std::vector<double>* packed[3] = {&cache->wq, &cache->wk, &cache->wv};
        const std::vector<double>* grads[3] = {&dq, &dk, &dv};
        for (int i = 0; i < 3; ++i) {
          if (in[0]) MutMap(in[0]->data(), R, D).noalias() += ConstMap(grads[i]->data(), R, W) * ConstMap(packed[i]->data(), D, W).transpose();
          if (in[1 + i]) {
            std::vector<double> dw(dim * width);
            MutMap(dw.data(), D, W).noalias() = xm.transpose() * ConstMap(grads[i]->data(), R, W);
            unpack_heads_add(dw, *in[1 + i], heads, dim, hd);
          }
        }
      });
}

}  // namespace lethe::ops
