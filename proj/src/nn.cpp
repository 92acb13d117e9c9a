#include "pathscan/nn.hpp"

#include <cmath>
#include <numbers>

#include "pathscan/error.hpp"

namespace pathscan::nn {

Tensor& ParamStore::add(const std::string& name, ad::Shape shape, std::vector<double> values) {
  if (index_.count(name)) fail(ErrorKind::kContract, "duplicate parameter '" + name + "'");
  index_[name] = entries_.size();
  entries_.emplace_back(name, Tensor::parameter(std::move(shape), std::move(values)));
  return entries_.back().second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::kContract, "no parameter '" + name + "'");
  return entries_[it->second].second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::kContract, "no parameter '" + name + "'");
  return entries_[it->second].second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

std::vector<double> init_normal(std::size_t n, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<double> v(n);
  for (double& x : v) x = static_cast<float>(normal(rng));
  return v;
}

std::vector<double> init_constant(std::size_t n, double v) {
  return std::vector<double>(n, static_cast<float>(v));
}

std::vector<double> position_code(double xn, double yn, std::size_t dim) {
  if (dim == 0 || dim % 4 != 0) fail(ErrorKind::kInvalidConfig, "position code width % 4 != 0");
  const std::size_t bands = dim / 4;
  std::vector<double> out(dim);
  for (std::size_t k = 0; k < bands; ++k) {
    // Geometric frequencies from pi to 32 pi across the unit square.
    const double e = bands == 1 ? 0.0 : 5.0 * static_cast<double>(k) / static_cast<double>(bands - 1);
    const double f = std::numbers::pi * std::exp2(e);
    out[4 * k] = std::sin(f * xn);
    out[4 * k + 1] = std::cos(f * xn);
    out[4 * k + 2] = std::sin(f * yn);
    out[4 * k + 3] = std::cos(f * yn);
  }
  return out;
}

Tensor Linear::operator()(const Tensor& x) const { return ad::add(ad::matmul(x, weight), bias); }

Linear make_linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out,
                   std::mt19937_64& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = ps.add(name + ".weight", {in, out}, init_normal(in * out, stddev, rng));
  l.bias = ps.add(name + ".bias", {out}, init_constant(out, 0.0));
  return l;
}

LayerNorm make_layernorm(ParamStore& ps, const std::string& name, std::size_t dim) {
  LayerNorm ln;
  ln.gamma = ps.add(name + ".gamma", {dim}, init_constant(dim, 1.0));
  ln.beta = ps.add(name + ".beta", {dim}, init_constant(dim, 0.0));
  return ln;
}

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  const double s = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return ad::softmax(ad::scale(ad::matmul(q, ad::transpose(k)), s), 1);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  return ad::matmul(attention_weights(q, k), v);
}

WindowPlan grid_windows(std::size_t rows, std::size_t cols, std::size_t window) {
  if (window == 0 || rows % window != 0 || cols % window != 0) {
    fail(ErrorKind::kInvalidConfig, "grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                                        " is not divisible into " + std::to_string(window) +
                                        "-cell windows");
  }
  WindowPlan plan;
  plan.window_tokens = window * window;
  plan.order.reserve(rows * cols);
  for (std::size_t wr = 0; wr < rows; wr += window) {
    for (std::size_t wc = 0; wc < cols; wc += window) {
      for (std::size_t r = wr; r < wr + window; ++r) {
        for (std::size_t c = wc; c < wc + window; ++c) plan.order.push_back(r * cols + c);
      }
    }
  }
  plan.inverse.assign(plan.order.size(), 0);
  for (std::size_t i = 0; i < plan.order.size(); ++i) plan.inverse[plan.order[i]] = i;
  return plan;
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& memory) const {
  const Tensor Q = q(query), K = k(memory), V = v(memory);
  const std::size_t dim = Q.cols(), dh = dim / heads;
  if (heads == 1) return o(attention(Q, K, V));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    outs.push_back(attention(ad::slice(Q, 1, h * dh, (h + 1) * dh),
                             ad::slice(K, 1, h * dh, (h + 1) * dh),
                             ad::slice(V, 1, h * dh, (h + 1) * dh)));
  }
  return o(ad::concat(outs, 1));
}

MultiHeadAttention make_mha(ParamStore& ps, const std::string& name, std::size_t dim,
                            std::size_t heads, std::mt19937_64& rng) {
  if (heads == 0 || dim % heads != 0) {
    fail(ErrorKind::kInvalidConfig, "dim " + std::to_string(dim) + " not divisible by " +
                                        std::to_string(heads) + " heads");
  }
  MultiHeadAttention m;
  m.q = make_linear(ps, name + ".q", dim, dim, rng);
  m.k = make_linear(ps, name + ".k", dim, dim, rng);
  m.v = make_linear(ps, name + ".v", dim, dim, rng);
  m.o = make_linear(ps, name + ".o", dim, dim, rng);
  m.heads = heads;
  return m;
}

FeedForward make_ffn(ParamStore& ps, const std::string& name, std::size_t dim,
                     std::size_t hidden, std::mt19937_64& rng) {
  return {make_linear(ps, name + ".fc1", dim, hidden, rng),
          make_linear(ps, name + ".fc2", hidden, dim, rng)};
}

Tensor EncoderLayer::operator()(const Tensor& x, const WindowPlan* windows) const {
  const Tensor xn = ln1(x);
  Tensor mixed;
  if (windows == nullptr) {
    mixed = attn(xn, xn);
  } else {
    const Tensor perm = ad::embedding_lookup(xn, windows->order);
    const std::size_t wt = windows->window_tokens;
    std::vector<Tensor> parts;
    for (std::size_t start = 0; start < perm.rows(); start += wt) {
      const Tensor win = ad::slice(perm, 0, start, start + wt);
      parts.push_back(attn(win, win));
    }
    mixed = ad::embedding_lookup(ad::concat(parts, 0), windows->inverse);
  }
  const Tensor h = ad::add(x, mixed);
  return ad::add(h, ffn(ln2(h)));
}

EncoderLayer make_encoder_layer(ParamStore& ps, const std::string& name, std::size_t dim,
                                std::size_t heads, std::size_t ffn_hidden, std::mt19937_64& rng) {
  EncoderLayer l;
  l.ln1 = make_layernorm(ps, name + ".ln1", dim);
  l.attn = make_mha(ps, name + ".attn", dim, heads, rng);
  l.ln2 = make_layernorm(ps, name + ".ln2", dim);
  l.ffn = make_ffn(ps, name + ".ffn", dim, ffn_hidden, rng);
  return l;
}

Tensor CrossAttentionLayer::operator()(const Tensor& query, const Tensor& memory) const {
  const Tensor h = ad::add(query, attn(ln_q(query), ln_mem(memory)));
  return ad::add(h, ffn(ln_ffn(h)));
}

CrossAttentionLayer make_cross_layer(ParamStore& ps, const std::string& name, std::size_t dim,
                                     std::size_t heads, std::size_t ffn_hidden,
                                     std::mt19937_64& rng) {
  CrossAttentionLayer l;
  l.ln_q = make_layernorm(ps, name + ".ln_q", dim);
  l.ln_mem = make_layernorm(ps, name + ".ln_mem", dim);
  l.attn = make_mha(ps, name + ".attn", dim, heads, rng);
  l.ln_ffn = make_layernorm(ps, name + ".ln_ffn", dim);
  l.ffn = make_ffn(ps, name + ".ffn", dim, ffn_hidden, rng);
  return l;
}

}  // namespace pathscan::nn
