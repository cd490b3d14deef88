// nn.hpp -- parameter registry and the neural building blocks: linear,
// layernorm, multi-head attention, pre-norm transformer layer.
#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pmae/common.hpp"
#include "pmae/optim.hpp"
#include "pmae/rng.hpp"
#include "pmae/tensor.hpp"

namespace pmae {

// Named parameters with deterministic (sorted-name) iteration order.
template <class T>
class ParamStore {
 public:
  Tensor<T> create(const std::string& name, Shape shape, std::vector<T> values) {
    check(!params_.count(name), "ParamStore: duplicate parameter '" + name + "'");
    Tensor<T> t = Tensor<T>::param(std::move(shape), std::move(values));
    params_.emplace(name, t);
    return t;
  }

  Tensor<T> get(const std::string& name) const {
    auto it = params_.find(name);
    check(it != params_.end(), "ParamStore: unknown parameter '" + name + "'");
    return it->second;
  }

  bool has(const std::string& name) const { return params_.count(name) > 0; }
  std::size_t count() const { return params_.size(); }

  std::vector<std::pair<std::string, Tensor<T>>> items() const {
    return {params_.begin(), params_.end()};
  }

  void zero_grad() {
    for (auto& [k, v] : params_) v.zero_grad();
  }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params_) n += v.size();
    return n;
  }

  // Bitwise hash over values in name order; detects any mutation.
  std::uint64_t value_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [k, v] : params_) {
      h = fnv1a(k, h);
      h = fnv1a(v.values().data(), v.values().size() * sizeof(T), h);
    }
    return h;
  }

 private:
  std::map<std::string, Tensor<T>> params_;
};

namespace init {
template <class T>
std::vector<T> xavier_uniform(int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<T> v(static_cast<std::size_t>(fan_in) * fan_out);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return v;
}

template <class T>
std::vector<T> normal(std::size_t n, double std, Rng& rng) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.gaussian(0.0, std));
  return v;
}

template <class T>
std::vector<T> truncated_normal(std::size_t n, double std, double lo, double hi, Rng& rng) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.truncated_gaussian(0.0, std, lo, hi));
  return v;
}

template <class T>
std::vector<T> constant(std::size_t n, T value) {
  return std::vector<T>(n, value);
}
}  // namespace init

template <class T>
struct Linear {
  Tensor<T> w;  // (in, out)
  Tensor<T> b;  // (out)

  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng) {
    w = ps.create(name + ".w", {in, out}, init::xavier_uniform<T>(in, out, rng));
    b = ps.create(name + ".b", {out}, init::constant<T>(static_cast<std::size_t>(out), T(0)));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.ndim() == 1) {
      Tensor<T> x2 = gather_rowvec(x);
      return row(add_rowvec(matmul(x2, w), b), 0);
    }
    return add_rowvec(matmul(x, w), b);
  }

 private:
  static Tensor<T> gather_rowvec(const Tensor<T>& x) { return stack_rows<T>({x}); }
};

template <class T>
struct LayerNorm {
  Tensor<T> gamma, beta;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, const std::string& name, int dim) {
    gamma = ps.create(name + ".gamma", {dim}, init::constant<T>(static_cast<std::size_t>(dim), T(1)));
    beta = ps.create(name + ".beta", {dim}, init::constant<T>(static_cast<std::size_t>(dim), T(0)));
  }

  Tensor<T> forward(const Tensor<T>& x) const { return layernorm_rows(x, gamma, beta, eps); }
};

// Post-softmax attention weights of one layer, per head, each (n_q x n_kv)
// row-major. Captured before attention dropout.
template <class T>
struct LayerAttention {
  int n_query = 0;
  int n_key = 0;
  std::vector<std::vector<T>> head_weights;
};

// Scaled dot-product multi-head attention. Self-attention when kv == q.
// Dropout is applied to the post-softmax weights and after the output
// projection, training mode only.
template <class T>
struct MultiHeadAttention {
  Linear<T> wq, wk, wv, wo;
  int n_heads = 1;
  double dropout_p = 0.0;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& ps, const std::string& name, int dim, int heads, double dropout, Rng& rng)
      : wq(ps, name + ".wq", dim, dim, rng),
        wk(ps, name + ".wk", dim, dim, rng),
        wv(ps, name + ".wv", dim, dim, rng),
        wo(ps, name + ".wo", dim, dim, rng),
        n_heads(heads),
        dropout_p(dropout) {
    check(dim % heads == 0, "MultiHeadAttention: dim not divisible by head count");
  }

  Tensor<T> forward(const Tensor<T>& query_in, const Tensor<T>& kv_in, bool training, Rng& rng,
                    LayerAttention<T>* capture = nullptr) const {
    check(query_in.ndim() == 2 && kv_in.ndim() == 2, "attention: token matrices expected");
    const int dim = query_in.dim(1);
    check(kv_in.dim(1) == dim, "attention: query/key dim mismatch");
    const int dh = dim / n_heads;
    Tensor<T> q = wq.forward(query_in);
    Tensor<T> k = wk.forward(kv_in);
    Tensor<T> v = wv.forward(kv_in);
    if (capture) {
      capture->n_query = query_in.dim(0);
      capture->n_key = kv_in.dim(0);
      capture->head_weights.clear();
    }
    std::vector<Tensor<T>> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < n_heads; ++h) {
      Tensor<T> qh = slice_cols(q, h * dh, (h + 1) * dh);
      Tensor<T> kh = slice_cols(k, h * dh, (h + 1) * dh);
      Tensor<T> vh = slice_cols(v, h * dh, (h + 1) * dh);
      Tensor<T> logits = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
      Tensor<T> weights = softmax_rows(logits);
      if (capture) capture->head_weights.push_back(weights.values());
      Tensor<T> dropped = dropout(weights, dropout_p, rng, training);
      heads.push_back(matmul(dropped, vh));
    }
    Tensor<T> merged = n_heads == 1 ? heads[0] : concat_cols(heads);
    return dropout(wo.forward(merged), dropout_p, rng, training);
  }
};

template <class T>
struct FeedForward {
  Linear<T> lin1, lin2;
  double dropout_p = 0.0;

  FeedForward() = default;
  FeedForward(ParamStore<T>& ps, const std::string& name, int dim, int hidden, double dropout, Rng& rng)
      : lin1(ps, name + ".lin1", dim, hidden, rng), lin2(ps, name + ".lin2", hidden, dim, rng), dropout_p(dropout) {}

  Tensor<T> forward(const Tensor<T>& x, bool training, Rng& rng) const {
    return dropout(lin2.forward(gelu(lin1.forward(x))), dropout_p, rng, training);
  }
};

// Pre-norm residual block: x + attn(LN(x)), then x + ff(LN(x)).
template <class T>
struct TransformerLayer {
  LayerNorm<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  FeedForward<T> ff;

  TransformerLayer() = default;
  TransformerLayer(ParamStore<T>& ps, const std::string& name, int dim, int heads, int ff_width, double dropout, Rng& rng)
      : ln1(ps, name + ".ln1", dim),
        ln2(ps, name + ".ln2", dim),
        attn(ps, name + ".attn", dim, heads, dropout, rng),
        ff(ps, name + ".ff", dim, ff_width, dropout, rng) {}

  Tensor<T> forward(const Tensor<T>& x, bool training, Rng& rng, LayerAttention<T>* capture = nullptr) const {
    Tensor<T> normed = ln1.forward(x);
    Tensor<T> y = add(x, attn.forward(normed, normed, training, rng, capture));
    return add(y, ff.forward(ln2.forward(y), training, rng));
  }
};

}  // namespace pmae
