#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace wt {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::string shape_string(const Shape& shape);
std::size_t shape_product(const Shape& shape);

// Additive mask value standing in for -inf. Any mask entry at or below
// kMaskedThreshold counts as masked.
inline constexpr double kMaskValue = -1e9;
inline constexpr double kMaskedThreshold = -1e9;

// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }
  // Extent of the last axis, and the number of rows that share it.
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  Tensor reshaped(Shape shape) const;
  void fill(double value);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

class Tape;

// Handle to a node of a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Ordered record of applied operations. Nodes are appended in evaluation
// order, so inputs always precede their consumers.
class Tape {
 public:
  // Called with the node's accumulated output gradient.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);      // differentiable input (a parameter)
  Var constant(Tensor value);  // not differentiated

  // Appends an operation node. The node requires a gradient when any input
  // does; backward is dropped otherwise.
  Var push(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var push(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  // Gradient buffer of v, allocated as zeros on first access. Returns nullptr
  // when v does not require a gradient, so adjoints can skip work.
  Tensor* grad_slot(Var v);
  // Gradient after backward(); zeros if the node was never reached.
  Tensor grad(Var v) const;

  // Reverse sweep from a scalar loss. A tape supports a single sweep.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  void check_owned(Var v) const;

  std::deque<Node> nodes_;  // deque keeps value references stable
  bool consumed_ = false;
};

// Inverted dropout settings. A null context or training=false is identity.
struct DropoutContext {
  double p = 0.0;
  bool training = false;
  Rng* rng = nullptr;
};

// 2-D product, or batched product of two rank-3 tensors.
Var matmul(Var a, Var b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Var transpose(Var x);
Var reshape(Var x, Shape shape);

// Softmax along the last axis. mask is additive and either has x's shape or
// the shape of x's last two axes (broadcast over the batch axis).
Var softmax_rows(Var x, const Tensor* mask = nullptr);

Var relu(Var x);
// Elementwise sum; y may also be a vector matching x's last axis.
Var add(Var x, Var y);
Var mul(Var x, Var y);
Var scale(Var x, double c);
// x * weights[index], differentiable in both.
Var scale_by_entry(Var x, Var weights, std::size_t index);
Var sum(Var x);
Var concat_last_dim(std::span<const Var> parts);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-6);
Var dropout(Var x, double p, bool training, Rng& rng);
Var dropout(Var x, const DropoutContext* ctx);
// Gathers rows of a [vocab x d] table.
Var embedding_lookup(Var table, std::span<const int> ids);

}  // namespace wt
