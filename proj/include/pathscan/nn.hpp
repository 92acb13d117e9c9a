#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pathscan/autodiff.hpp"

namespace pathscan::nn {

using ad::Tensor;

// Named trainable parameters in insertion order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, ad::Shape shape, std::vector<double> values);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

// Initializers round to float32 so parameters survive a float32 checkpoint.
std::vector<double> init_normal(std::size_t n, double stddev, std::mt19937_64& rng);
std::vector<double> init_constant(std::size_t n, double v);

// Fixed 2D sinusoidal code of normalized coordinates; `dim` must be a
// multiple of 4.
std::vector<double> position_code(double xn, double yn, std::size_t dim);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Tensor operator()(const Tensor& x) const;
};

Linear make_linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out,
                   std::mt19937_64& rng);

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  Tensor operator()(const Tensor& x) const { return ad::layernorm(x, gamma, beta); }
};

LayerNorm make_layernorm(ParamStore& ps, const std::string& name, std::size_t dim);

// softmax(q k^T / sqrt(d)) v for a single head.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);
// The [nq, nk] weight matrix used by attention().
Tensor attention_weights(const Tensor& q, const Tensor& k);

// Partition of a token sequence into equal contiguous windows after a
// permutation; attention is computed within each window only.
struct WindowPlan {
  std::vector<std::size_t> order;    // window-major token order
  std::vector<std::size_t> inverse;  // position of token i in `order`
  std::size_t window_tokens = 0;
};

// Square windows of `window` x `window` cells over a rows x cols grid. Both
// extents must be multiples of `window`.
WindowPlan grid_windows(std::size_t rows, std::size_t cols, std::size_t window);

struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  Tensor operator()(const Tensor& query, const Tensor& memory) const;
};

MultiHeadAttention make_mha(ParamStore& ps, const std::string& name, std::size_t dim,
                            std::size_t heads, std::mt19937_64& rng);

struct FeedForward {
  Linear fc1, fc2;

  Tensor operator()(const Tensor& x) const { return fc2(ad::gelu(fc1(x))); }
};

FeedForward make_ffn(ParamStore& ps, const std::string& name, std::size_t dim,
                     std::size_t hidden, std::mt19937_64& rng);

// Pre-norm transformer encoder layer.
struct EncoderLayer {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ffn;

  Tensor operator()(const Tensor& x, const WindowPlan* windows = nullptr) const;
};

EncoderLayer make_encoder_layer(ParamStore& ps, const std::string& name, std::size_t dim,
                                std::size_t heads, std::size_t ffn_hidden, std::mt19937_64& rng);

// Pre-norm cross-attention layer for a query block attending to a memory;
// no self-attention between queries.
struct CrossAttentionLayer {
  LayerNorm ln_q, ln_mem, ln_ffn;
  MultiHeadAttention attn;
  FeedForward ffn;

  Tensor operator()(const Tensor& query, const Tensor& memory) const;
};

CrossAttentionLayer make_cross_layer(ParamStore& ps, const std::string& name, std::size_t dim,
                                     std::size_t heads, std::size_t ffn_hidden,
                                     std::mt19937_64& rng);

}  // namespace pathscan::nn
