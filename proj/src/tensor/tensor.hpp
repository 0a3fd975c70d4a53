#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lethe {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first touched
  bool requires_grad = false;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense row-major array. Values are fixed at construction; only the gradient
// buffer changes afterwards. Copies share storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::span<const double> values() const;
  double operator[](std::size_t i) const { return values()[i]; }
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  // Zeros when backward never reached this tensor.
  std::span<const double> grad() const;
  void zero_grad() const;

  // Same values in fresh storage, outside any tape.
  Tensor detach(bool requires_grad = false) const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

// Ordered record of differentiable operations. Each op appends one entry whose
// inputs were created before it, so reverse iteration is a valid topological
// order. An inference tape records nothing and its outputs never require grad.
class Tape {
 public:
  enum class Mode { kRecord, kInference };

  // Receives the op's output values and gradient and, per input, a pointer to
  // the gradient buffer to accumulate into (null when that input needs none).
  using GradSlots = std::span<std::vector<double>* const>;
  using BackwardFn =
      std::function<void(std::span<const double> out_values, std::span<const double> out_grad, GradSlots in_grads)>;

  explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::kRecord; }
  std::size_t size() const { return entries_.size(); }

  // Wraps op output values. The backward rule is kept only when recording and
  // at least one input requires grad. Non-finite outputs raise NumericError.
  Tensor record(const char* op, Shape shape, std::vector<double> values,
                std::initializer_list<Tensor> inputs, BackwardFn backward);
  Tensor record(const char* op, Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1, runs every entry once in reverse, then clears.
  void backward(const Tensor& loss);
  void reset() { entries_.clear(); }

 private:
  struct Entry {
    const char* op;
    std::shared_ptr<detail::Node> output;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    BackwardFn backward;
  };

  Mode mode_;
  std::vector<Entry> entries_;
};

void check_finite(std::span<const double> values, const char* where);

// Rows of x along the leading axis, in the given order. Not recorded on any tape.
Tensor take(const Tensor& x, std::span<const std::size_t> indices);
Tensor take_range(const Tensor& x, std::size_t start, std::size_t count);

}  // namespace lethe
