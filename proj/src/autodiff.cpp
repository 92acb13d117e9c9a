#include "pathscan/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_set>

#include "pathscan/error.hpp"

namespace pathscan::ad {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

namespace {

using NodePtr = std::shared_ptr<Node>;

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  fail(ErrorKind::kShape, std::string(op) + ": " + detail);
}

Tensor make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    shape_error("tensor", "shape " + shape_str(shape) + " does not match " +
                              std::to_string(values.size()) + " values");
  }
  for (double v : values) {
    if (!std::isfinite(v)) fail(ErrorKind::kNumeric, "tensor: non-finite initial value");
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<NodePtr> inputs, std::function<void(Node&)> bw) {
  for (double v : values) {
    if (!std::isfinite(v)) fail(ErrorKind::kNumeric, std::string(op) + ": produced NaN/Inf");
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->is_leaf = false;
  for (const NodePtr& in : inputs) n->requires_grad = n->requires_grad || in->requires_grad;
  if (n->requires_grad) {
    n->inputs = std::move(inputs);
    n->backward = std::move(bw);
  }
  return Tensor(std::move(n));
}

std::size_t mat_rows(const Shape& s) {
  if (s.size() <= 1) return 1;
  if (s.size() == 2) return s[0];
  return numel(s) / s.back();
}

std::size_t mat_cols(const Shape& s) { return s.empty() ? 1 : s.back(); }

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() > 2) shape_error(op, "expects rank <= 2, got " + shape_str(t.shape()));
}

enum class Bcast { kSame, kScalar, kRow };

Bcast classify(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (b.numel() == 1) return Bcast::kScalar;
  if (a.rank() == 2 && b.numel() == a.cols() &&
      (b.rank() == 1 || (b.rank() == 2 && b.shape()[0] == 1))) {
    return Bcast::kRow;
  }
  shape_error(op, "cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
}

inline std::size_t bidx(Bcast bc, std::size_t i, std::size_t cols) {
  switch (bc) {
    case Bcast::kSame: return i;
    case Bcast::kScalar: return 0;
    case Bcast::kRow: return i % cols;
  }
  return i;
}

// f(x, y), with partials dfx(x, y, out) and dfy(x, y, out).
template <typename F, typename DX, typename DY>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DX dfx, DY dfy) {
  const Bcast bc = classify(op, a, b);
  const std::size_t n = a.numel(), cols = a.cols();
  std::vector<double> out(n);
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[bidx(bc, i, cols)]);
  return make_result(op, a.shape(), std::move(out), {a.ptr(), b.ptr()},
                     [bc, cols, dfx, dfy](Node& self) {
                       Node& x = *self.inputs[0];
                       Node& y = *self.inputs[1];
                       const std::size_t n = self.value.size();
                       if (x.requires_grad) {
                         auto& g = x.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) {
                           g[i] += self.grad[i] * dfx(x.value[i], y.value[bidx(bc, i, cols)], self.value[i]);
                         }
                       }
                       if (y.requires_grad) {
                         auto& g = y.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) {
                           const std::size_t j = bidx(bc, i, cols);
                           g[j] += self.grad[i] * dfy(x.value[i], y.value[j], self.value[i]);
                         }
                       }
                     });
}

// f(x) with derivative df(x, out).
template <typename F, typename DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df) {
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  const auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i]);
  return make_result(op, a.shape(), std::move(out), {a.ptr()}, [df](Node& self) {
    Node& x = *self.inputs[0];
    auto& g = x.ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      g[i] += self.grad[i] * df(x.value[i], self.value[i]);
    }
  });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return make_leaf(std::move(shape), std::move(values), false);
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return make_leaf(std::move(shape), std::move(values), true);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double v) { return make_leaf({}, {v}, false); }

std::size_t Tensor::rows() const { return mat_rows(shape()); }
std::size_t Tensor::cols() const { return mat_cols(shape()); }

double Tensor::item() const {
  if (numel() != 1) fail(ErrorKind::kContract, "item() on non-scalar tensor " + shape_str(shape()));
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    fail(ErrorKind::kContract, "backward needs a scalar loss, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order without recursion.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (!n->is_leaf) n->grad.assign(n->value.size(), 0.0);
  }
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf && n->backward) n->backward(*n);
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

namespace {

// Four independent accumulators let the reduction pipeline without
// reassociation flags.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    s0 += a[j] * b[j];
    s1 += a[j + 1] * b[j + 1];
    s2 += a[j + 2] * b[j + 2];
    s3 += a[j + 3] * b[j + 3];
  }
  for (; j < n; ++j) s0 += a[j] * b[j];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    shape_error("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return make_result("matmul", {m, n}, std::move(out), {a.ptr(), b.ptr()},
                     [m, k, n](Node& self) {
                       Node& A = *self.inputs[0];
                       Node& B = *self.inputs[1];
                       const double* g = self.grad.data();
                       if (A.requires_grad) {
                         auto& ga = A.ensure_grad();
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* grow = g + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             ga[i * k + p] += dot(grow, B.value.data() + p * n, n);
                           }
                         }
                       }
                       if (B.requires_grad) {
                         auto& gb = B.ensure_grad();
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* grow = g + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             const double aip = A.value[i * k + p];
                             if (aip == 0.0) continue;
                             double* gbrow = gb.data() + p * n;
                             for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                           }
                         }
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_matrix("transpose", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto av = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  }
  return make_result("transpose", {n, m}, std::move(out), {a.ptr()}, [m, n](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    shape_error("reshape", shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {a.ptr()}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  if (axis > 1) shape_error("concat", "axis must be 0 or 1");
  std::vector<NodePtr> inputs;
  std::size_t rows = 0, cols = 0;
  for (const Tensor& p : parts) {
    require_matrix("concat", p);
    inputs.push_back(p.ptr());
    if (axis == 0) {
      if (cols == 0) cols = p.cols();
      if (p.cols() != cols) shape_error("concat", "column mismatch along axis 0");
      rows += p.rows();
    } else {
      if (rows == 0) rows = p.rows();
      if (p.rows() != rows) shape_error("concat", "row mismatch along axis 1");
      cols += p.cols();
    }
  }
  std::vector<double> out(rows * cols);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const auto pv = p.values();
    const std::size_t pr = p.rows(), pc = p.cols();
    for (std::size_t i = 0; i < pr; ++i) {
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t dst = axis == 0 ? (offset + i) * cols + j : i * cols + offset + j;
        out[dst] = pv[i * pc + j];
      }
    }
    offset += axis == 0 ? pr : pc;
  }
  return make_result("concat", {rows, cols}, std::move(out), std::move(inputs),
                     [axis, cols](Node& self) {
                       std::size_t offset = 0;
                       for (const NodePtr& in : self.inputs) {
                         const std::size_t pr = mat_rows(in->shape), pc = mat_cols(in->shape);
                         if (in->requires_grad) {
                           auto& g = in->ensure_grad();
                           for (std::size_t i = 0; i < pr; ++i) {
                             for (std::size_t j = 0; j < pc; ++j) {
                               const std::size_t src =
                                   axis == 0 ? (offset + i) * cols + j : i * cols + offset + j;
                               g[i * pc + j] += self.grad[src];
                             }
                           }
                         }
                         offset += axis == 0 ? pr : pc;
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  require_matrix("slice", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (axis > 1) shape_error("slice", "axis must be 0 or 1");
  const std::size_t extent = axis == 0 ? m : n;
  if (begin >= end || end > extent) {
    shape_error("slice", "range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") outside extent " + std::to_string(extent));
  }
  const std::size_t out_r = axis == 0 ? end - begin : m;
  const std::size_t out_c = axis == 0 ? n : end - begin;
  std::vector<double> out(out_r * out_c);
  const auto av = a.values();
  for (std::size_t i = 0; i < out_r; ++i) {
    for (std::size_t j = 0; j < out_c; ++j) {
      out[i * out_c + j] = axis == 0 ? av[(begin + i) * n + j] : av[i * n + begin + j];
    }
  }
  return make_result("slice", {out_r, out_c}, std::move(out), {a.ptr()},
                     [axis, begin, n, out_r, out_c](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < out_r; ++i) {
                         for (std::size_t j = 0; j < out_c; ++j) {
                           const std::size_t src =
                               axis == 0 ? (begin + i) * n + j : i * n + begin + j;
                           g[src] += self.grad[i * out_c + j];
                         }
                       }
                     });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> indices) {
  require_matrix("embedding_lookup", table);
  const std::size_t v = table.rows(), c = table.cols();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> out(idx.size() * c);
  const auto tv = table.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= v) {
      fail(ErrorKind::kRange, "embedding_lookup: index " + std::to_string(idx[i]) +
                                  " >= table size " + std::to_string(v));
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(idx[i] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  const std::size_t n = idx.size();
  return make_result("embedding_lookup", {n, c}, std::move(out), {table.ptr()},
                     [idx = std::move(idx), c](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
                       }
                     });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result("sum", {}, {s}, {a.ptr()}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (double& x : g) x += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) shape_error("mean", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  require_matrix("sum_axis", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (axis > 1) shape_error("sum_axis", "axis must be 0 or 1");
  std::vector<double> out(axis == 0 ? n : m, 0.0);
  const auto av = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += av[i * n + j];
  }
  Shape shape = axis == 0 ? Shape{1, n} : Shape{m, 1};
  return make_result("sum_axis", std::move(shape), std::move(out), {a.ptr()},
                     [axis, m, n](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[axis == 0 ? j : i];
                       }
                     });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  require_matrix("softmax", a);
  if (axis > 1) shape_error("softmax", "axis must be 0 or 1");
  const std::size_t m = a.rows(), n = a.cols();
  // Lines are rows for axis 1 and columns for axis 0.
  const std::size_t lines = axis == 1 ? m : n, len = axis == 1 ? n : m;
  const std::size_t stride = axis == 1 ? 1 : n, line_step = axis == 1 ? n : 1;
  std::vector<double> out(m * n);
  const auto av = a.values();
  for (std::size_t l = 0; l < lines; ++l) {
    const std::size_t base = l * line_step;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < len; ++t) mx = std::max(mx, av[base + t * stride]);
    double z = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      const double e = std::exp(av[base + t * stride] - mx);
      out[base + t * stride] = e;
      z += e;
    }
    for (std::size_t t = 0; t < len; ++t) out[base + t * stride] /= z;
  }
  return make_result("softmax", a.shape(), std::move(out), {a.ptr()},
                     [lines, len, stride, line_step](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t l = 0; l < lines; ++l) {
                         const std::size_t base = l * line_step;
                         double dot = 0.0;
                         for (std::size_t t = 0; t < len; ++t) {
                           const std::size_t i = base + t * stride;
                           dot += self.grad[i] * self.value[i];
                         }
                         for (std::size_t t = 0; t < len; ++t) {
                           const std::size_t i = base + t * stride;
                           g[i] += self.value[i] * (self.grad[i] - dot);
                         }
                       }
                     });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor log_sigmoid(const Tensor& a) {
  return unary(
      "log_sigmoid", a,
      [](double x) { return x < 0.0 ? x - std::log1p(std::exp(x)) : -std::log1p(std::exp(-x)); },
      [](double x, double) { return stable_sigmoid(-x); });
}

Tensor gelu(const Tensor& a) {
  return unary(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
      });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor pow(const Tensor& a, double p) {
  return unary(
      "pow", a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor layernorm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
  require_matrix("layernorm", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (gamma.numel() != n || beta.numel() != n) shape_error("layernorm", "gamma/beta size mismatch");
  std::vector<double> xhat(m * n), inv_std(m), out(m * n);
  const auto av = a.values(), gv = gamma.values(), bv = beta.values();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += av[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (av[i * n + j] - mu) * (av[i * n + j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (av[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = gv[j] * xhat[i * n + j] + bv[j];
    }
  }
  return make_result(
      "layernorm", a.shape(), std::move(out), {a.ptr(), gamma.ptr(), beta.ptr()},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& x = *self.inputs[0];
        Node& g = *self.inputs[1];
        Node& b = *self.inputs[2];
        if (g.requires_grad) {
          auto& gg = g.ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) gg[j] += self.grad[i * n + j] * xhat[i * n + j];
          }
        }
        if (b.requires_grad) {
          auto& gb = b.ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
          }
        }
        if (x.requires_grad) {
          auto& gx = x.ensure_grad();
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = self.grad[i * n + j] * g.value[j];
              mean_d += d;
              mean_dx += d * xhat[i * n + j];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = self.grad[i * n + j] * g.value[j];
              gx[i * n + j] += inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
            }
          }
        }
      });
}

}  // namespace pathscan::ad
