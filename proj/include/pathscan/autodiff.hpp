#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

// Minimal dense reverse-mode differentiation over row-major double tensors.
//
// Most ops are defined on rank-2 tensors; rank-1 [n] behaves as [1, n] and a
// rank-0 tensor is a scalar. Binary elementwise ops broadcast only their
// second operand, either as a scalar or as a [1, n] row repeated over the
// leading dimension. Every forward result is checked for NaN/Inf.
namespace pathscan::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first written
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  // Matrix view: rank 0 -> 1x1, rank 1 [n] -> 1xn.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return node_->value; }
  // For optimizers and tests; mutating values of a tensor already used in a
  // graph invalidates that graph.
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Populates gradients of every requires_grad leaf reachable from `loss`.
// Leaf gradients accumulate across calls; intermediate ones are recomputed.
void backward(const Tensor& loss);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
// Row gather: out[i] = table[indices[i]]; the backward pass scatter-adds.
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> indices);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Keeps the reduced axis with extent 1.
Tensor sum_axis(const Tensor& a, std::size_t axis);

Tensor softmax(const Tensor& a, std::size_t axis);
Tensor sigmoid(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor pow(const Tensor& a, double p);
// Gradient passes where lo < a < hi and is zero elsewhere.
Tensor clamp(const Tensor& a, double lo, double hi);
// Per-row normalization over the last axis, then gamma * x + beta.
Tensor layernorm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-8);

}  // namespace pathscan::ad
