#include "tensor/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <sstream>

#include "common/error.hpp"

namespace lethe {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void check_finite(std::span<const double> values, const char* where) {
  // An all-ones exponent marks Inf or NaN. The branch-free scan vectorizes;
  // the slow loop below only runs to report the first offender.
  constexpr std::uint64_t kExp = 0x7FF0000000000000ull;
  std::uint64_t bad = 0;
  for (double v : values) bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & kExp) == kExp);
  if (!bad) return;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << where << ": non-finite value " << values[i] << " at element " << i;
      throw NumericError(os.str());
    }
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " elements but " +
                         std::to_string(values.size()) + " values were given");
  }
  check_finite(values, "tensor");
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("tensor: use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
  if (!node_) throw ContractError("tensor: use of undefined tensor");
  return node_->values;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("tensor: item() on tensor of shape " + shape_string(shape()));
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) throw ContractError("tensor: use of undefined tensor");
  return node_->ensure_grad();
}

void Tensor::zero_grad() const {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach(bool requires_grad) const {
  return Tensor(shape(), std::vector<double>(values().begin(), values().end()), requires_grad);
}

Tensor Tape::record(const char* op, Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                    BackwardFn backward) {
  return record(op, std::move(shape), std::move(values), std::vector<Tensor>(inputs), std::move(backward));
}

Tensor Tape::record(const char* op, Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                    BackwardFn backward) {
  check_finite(values, op);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);

  bool needs_grad = false;
  if (recording()) {
    for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    Entry entry{op, node, {}, std::move(backward)};
    entry.inputs.reserve(inputs.size());
    for (const auto& t : inputs) entry.inputs.push_back(t.node_);
    entries_.push_back(std::move(entry));
  }
  return Tensor(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1 || loss.rank() != 0) {
    throw ContractError("backward: loss must be a scalar tensor, got shape " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    entries_.clear();
    return;
  }
  loss.node_->ensure_grad()[0] += 1.0;

  std::vector<std::vector<double>*> in_grads;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto& entry = *it;
    if (entry.output->grad.empty()) continue;  // not on a path to the loss
    in_grads.clear();
    for (const auto& in : entry.inputs) {
      in_grads.push_back(in->requires_grad ? &in->ensure_grad() : nullptr);
    }
    entry.backward(entry.output->values, entry.output->grad, in_grads);
    for (const auto* g : in_grads) {
      if (g) check_finite(*g, entry.op);
    }
  }
  entries_.clear();
}

Tensor take(const Tensor& x, std::span<const std::size_t> indices) {
  if (x.rank() == 0) throw DimensionError("take: cannot index a scalar");
  Shape shape = x.shape();
  const std::size_t stride = shape_numel(shape) / shape[0];
  auto xv = x.values();
  std::vector<double> out;
  out.reserve(indices.size() * stride);
  for (auto i : indices) {
    if (i >= shape[0]) {
      throw IndexError("take: index " + std::to_string(i) + " out of range for " + shape_string(shape));
    }
    out.insert(out.end(), xv.begin() + static_cast<std::ptrdiff_t>(i * stride),
               xv.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
  }
  shape[0] = indices.size();
  return Tensor(std::move(shape), std::move(out));
}

Tensor take_range(const Tensor& x, std::size_t start, std::size_t count) {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
  return take(x, idx);
}

}  // namespace lethe
