// tensor.hpp -- reverse-mode autodiff over dense arrays.
//
// A Tensor<T> is a handle to a tape node holding values, an optional
// gradient buffer and a backward closure. Ops record the graph while
// grad mode is enabled (see NoGradGuard); backward(loss) walks nodes in
// reverse creation order and accumulates d loss / d node into every
// reachable node that requires grad. T is float for training runs and
// double wherever finite-difference checks need 64-bit headroom.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <unordered_set>
#include <vector>

#include "pmae/common.hpp"
#include "pmae/rng.hpp"

namespace pmae {

namespace detail {
inline std::uint64_t& node_counter() {
  thread_local std::uint64_t c = 0;
  return c;
}
inline bool& grad_mode() {
  thread_local bool on = true;
  return on;
}
}  // namespace detail

// Disables graph recording in scope (inference / evaluation paths).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> val;
  std::vector<T> grad;  // allocated on demand
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }

  static Tensor filled(Shape shape, T v) {
    Tensor t = raw(std::move(shape));
    std::fill(t.node_->val.begin(), t.node_->val.end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    check(numel(shape) == values.size(), "Tensor::from: value count does not match shape " + shape_str(shape));
    Tensor t = raw(std::move(shape));
    t.node_->val = std::move(values);
    return t;
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  // Leaf that participates in backward (model parameter).
  static Tensor param(Shape shape, std::vector<T> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->val.size(); }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int rows() const { return node_->shape.size() == 2 ? node_->shape[0] : 1; }
  int cols() const { return node_->shape.size() == 2 ? node_->shape[1] : node_->shape[0]; }

  std::vector<T>& values() { return node_->val; }
  const std::vector<T>& values() const { return node_->val; }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_->requires_grad; }

  T item() const {
    check(size() == 1, "Tensor::item: tensor is not scalar");
    return node_->val[0];
  }

  void zero_grad() {
    if (node_) node_->grad.assign(node_->val.size(), T(0));
  }

  bool all_finite() const {
    for (T v : node_->val) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  std::shared_ptr<TensorNode<T>>& node() { return node_; }
  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

  static Tensor raw(Shape shape) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = std::move(shape);
    t.node_->val.resize(numel(t.node_->shape));
    t.node_->id = ++detail::node_counter();
    return t;
  }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <class T>
Tensor<T> make_op(Shape shape, std::vector<Tensor<T>> parents, std::function<void(TensorNode<T>&)> backward) {
  Tensor<T> out = Tensor<T>::raw(std::move(shape));
  bool track = grad_mode();
  bool any = false;
  if (track) {
    for (const auto& p : parents) any = any || p.node()->requires_grad;
  }
  if (track && any) {
    out.node()->requires_grad = true;
    out.node()->parents.reserve(parents.size());
    for (auto& p : parents) out.node()->parents.push_back(p.node());
    out.node()->backward_fn = std::move(backward);
  }
  return out;
}

// Accumulating matrix kernels, row-major.
template <class T>
void gemm_nn_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      T* crow = c + i * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c (m x n) += a (m x k) * b^T with b stored (n x k)
template <class T>
void gemm_nt_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// c (k x n) += a^T * b with a stored (m x k), b (m x n)
template <class T>
void gemm_tn_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      T* crow = c + p * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = detail::make_op<T>(a.shape(), {a, b}, [](TensorNode<T>& self) {
    for (int s = 0; s < 2; ++s) {
      auto& p = *self.parents[static_cast<std::size_t>(s)];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = a.values()[i] + b.values()[i];
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor<T> out = detail::make_op<T>(a.shape(), {a, b}, [](TensorNode<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = a.values()[i] - b.values()[i];
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor<T> out = detail::make_op<T>(a.shape(), {a, b}, [](TensorNode<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.val[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.val[i];
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, double c) {
  Tensor<T> out = detail::make_op<T>(a.shape(), {a}, [c](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * static_cast<T>(c);
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = a.values()[i] * static_cast<T>(c);
  return out;
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  return mul(a, a);
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out = detail::make_op<T>(x.shape(), {x}, [](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = static_cast<double>(p.val[i]);
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      p.grad[i] += self.grad[i] * static_cast<T>(cdf + v * pdf);
    }
  });
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(x.values()[i]);
    out.values()[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = detail::make_op<T>(x.shape(), {x}, [](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (p.val[i] > T(0)) p.grad[i] += self.grad[i];
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = std::max(x.values()[i], T(0));
  return out;
}

// Inverted dropout; identity in eval mode (consumes no randomness there).
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training) {
  check(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1)");
  if (!training || p == 0.0) return x;
  auto mask = std::make_shared<std::vector<unsigned char>>(x.size());
  for (auto& m : *mask) m = rng.uniform() >= p ? 1 : 0;
  const T scale_keep = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> out = detail::make_op<T>(x.shape(), {x}, [mask, scale_keep](TensorNode<T>& self) {
    auto& par = *self.parents[0];
    par.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if ((*mask)[i]) par.grad[i] += self.grad[i] * scale_keep;
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.values()[i] = (*mask)[i] ? x.values()[i] * scale_keep : T(0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// matrix ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.ndim() == 2 && b.ndim() == 2, "matmul: expects 2-D operands");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  check(k == k2, "matmul: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out = detail::make_op<T>({m, n}, {a, b}, [m, k, n](TensorNode<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      detail::gemm_nt_acc(self.grad.data(), pb.val.data(), pa.grad.data(), m, n, k);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      detail::gemm_tn_acc(pa.val.data(), self.grad.data(), pb.grad.data(), m, k, n);
    }
  });
  std::fill(out.values().begin(), out.values().end(), T(0));
  detail::gemm_nn_acc(a.values().data(), b.values().data(), out.values().data(), m, k, n);
  return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  check(a.ndim() == 2, "transpose: expects 2-D");
  const int m = a.dim(0), n = a.dim(1);
  Tensor<T> out = detail::make_op<T>({n, m}, {a}, [m, n](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) p.grad[static_cast<std::size_t>(i) * n + j] += self.grad[static_cast<std::size_t>(j) * m + i];
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.values()[static_cast<std::size_t>(j) * m + i] = a.values()[static_cast<std::size_t>(i) * n + j];
  return out;
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
  check(a.ndim() == 2, "slice_cols: expects 2-D");
  const int m = a.dim(0), n = a.dim(1);
  check(0 <= c0 && c0 < c1 && c1 <= n, "slice_cols: bad range");
  const int w = c1 - c0;
  Tensor<T> out = detail::make_op<T>({m, w}, {a}, [m, n, c0, w](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j) p.grad[static_cast<std::size_t>(i) * n + c0 + j] += self.grad[static_cast<std::size_t>(i) * w + j];
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j) out.values()[static_cast<std::size_t>(i) * w + j] = a.values()[static_cast<std::size_t>(i) * n + c0 + j];
  return out;
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  check(!parts.empty(), "concat_cols: empty input");
  const int m = parts[0].dim(0);
  int n = 0;
  for (const auto& p : parts) {
    check(p.ndim() == 2 && p.dim(0) == m, "concat_cols: row mismatch");
    n += p.dim(1);
  }
  std::vector<int> widths;
  for (const auto& p : parts) widths.push_back(p.dim(1));
  Tensor<T> out = detail::make_op<T>({m, n}, parts, [m, n, widths](TensorNode<T>& self) {
    int off = 0;
    for (std::size_t s = 0; s < self.parents.size(); ++s) {
      auto& p = *self.parents[s];
      const int w = widths[s];
      if (p.requires_grad) {
        p.ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j) p.grad[static_cast<std::size_t>(i) * w + j] += self.grad[static_cast<std::size_t>(i) * n + off + j];
      }
      off += w;
    }
  });
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j) out.values()[static_cast<std::size_t>(i) * n + off + j] = p.values()[static_cast<std::size_t>(i) * w + j];
    off += w;
  }
  return out;
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, std::vector<int> idx) {
  check(a.ndim() == 2, "gather_rows: expects 2-D");
  const int n = a.dim(1);
  for (int r : idx) check(0 <= r && r < a.dim(0), "gather_rows: index out of range");
  const int m = static_cast<int>(idx.size());
  auto ix = std::make_shared<std::vector<int>>(std::move(idx));
  Tensor<T> out = detail::make_op<T>({m, n}, {a}, [ix, n](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < ix->size(); ++i) {
      const std::size_t src = i * static_cast<std::size_t>(n);
      const std::size_t dst = static_cast<std::size_t>((*ix)[i]) * n;
      for (int j = 0; j < n; ++j) p.grad[dst + j] += self.grad[src + j];
    }
  });
  for (std::size_t i = 0; i < ix->size(); ++i) {
    const std::size_t src = static_cast<std::size_t>((*ix)[i]) * n;
    std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>(src), n, out.values().begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return out;
}

template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  check(!parts.empty(), "concat_rows: empty input");
  const int n = parts[0].ndim() == 2 ? parts[0].dim(1) : parts[0].dim(0);
  int m = 0;
  std::vector<int> heights;
  for (const auto& p : parts) {
    const int pr = p.ndim() == 2 ? p.dim(0) : 1;
    const int pc = p.ndim() == 2 ? p.dim(1) : p.dim(0);
    check(pc == n, "concat_rows: column mismatch");
    heights.push_back(pr);
    m += pr;
  }
  Tensor<T> out = detail::make_op<T>({m, n}, parts, [n, heights](TensorNode<T>& self) {
    std::size_t off = 0;
    for (std::size_t s = 0; s < self.parents.size(); ++s) {
      auto& p = *self.parents[s];
      const std::size_t cnt = static_cast<std::size_t>(heights[s]) * n;
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t i = 0; i < cnt; ++i) p.grad[i] += self.grad[off + i];
      }
      off += cnt;
    }
  });
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
  }
  return out;
}

// Stack 1-D tensors of equal length into a matrix, one per row.
template <class T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
  check(!rows.empty(), "stack_rows: empty input");
  const int n = rows[0].dim(0);
  for (const auto& r : rows) check(r.ndim() == 1 && r.dim(0) == n, "stack_rows: length mismatch");
  const int m = static_cast<int>(rows.size());
  Tensor<T> out = detail::make_op<T>({m, n}, rows, [n](TensorNode<T>& self) {
    for (std::size_t s = 0; s < self.parents.size(); ++s) {
      auto& p = *self.parents[s];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (int j = 0; j < n; ++j) p.grad[static_cast<std::size_t>(j)] += self.grad[s * static_cast<std::size_t>(n) + j];
    }
  });
  for (std::size_t s = 0; s < rows.size(); ++s) {
    std::copy(rows[s].values().begin(), rows[s].values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(s * static_cast<std::size_t>(n)));
  }
  return out;
}

template <class T>
Tensor<T> row(const Tensor<T>& a, int r) {
  check(a.ndim() == 2, "row: expects 2-D");
  check(0 <= r && r < a.dim(0), "row: index out of range");
  const int n = a.dim(1);
  Tensor<T> out = detail::make_op<T>({n}, {a}, [r, n](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int j = 0; j < n; ++j) p.grad[static_cast<std::size_t>(r) * n + j] += self.grad[static_cast<std::size_t>(j)];
  });
  std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>(r) * n, n, out.values().begin());
  return out;
}

// matrix (m x n) + row vector (n), broadcast over rows
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& v) {
  check(a.ndim() == 2 && v.ndim() == 1 && a.dim(1) == v.dim(0), "add_rowvec: shape mismatch");
  const int m = a.dim(0), n = a.dim(1);
  Tensor<T> out = detail::make_op<T>(a.shape(), {a, v}, [m, n](TensorNode<T>& self) {
    auto& pa = *self.parents[0];
    auto& pv = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pv.requires_grad) {
      pv.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) pv.grad[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(i) * n + j];
    }
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.values()[static_cast<std::size_t>(i) * n + j] = a.values()[static_cast<std::size_t>(i) * n + j] + v.values()[static_cast<std::size_t>(j)];
  return out;
}

// ---------------------------------------------------------------------------
// normalization / softmax
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  const int m = a.ndim() == 2 ? a.dim(0) : 1;
  const int n = a.ndim() == 2 ? a.dim(1) : a.dim(0);
  Tensor<T> out = detail::make_op<T>(a.shape(), {a}, [m, n](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < m; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * n;
      double dot = 0;
      for (int j = 0; j < n; ++j) dot += static_cast<double>(self.grad[off + j]) * self.val[off + j];
      for (int j = 0; j < n; ++j) p.grad[off + j] += self.val[off + j] * (self.grad[off + j] - static_cast<T>(dot));
    }
  });
  for (int i = 0; i < m; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * n;
    T mx = a.values()[off];
    for (int j = 1; j < n; ++j) mx = std::max(mx, a.values()[off + j]);
    double sum = 0;
    for (int j = 0; j < n; ++j) {
      const double e = std::exp(static_cast<double>(a.values()[off + j] - mx));
      out.values()[off + j] = static_cast<T>(e);
      sum += e;
    }
    for (int j = 0; j < n; ++j) out.values()[off + j] = static_cast<T>(out.values()[off + j] / sum);
  }
  return out;
}

namespace detail {
template <class T>
void layernorm_forward(const T* x, T* y, double* mu_s, int m, int n, double eps) {
  for (int i = 0; i < m; ++i) {
    const T* xr = x + static_cast<std::size_t>(i) * n;
    T* yr = y + static_cast<std::size_t>(i) * n;
    double mu = 0;
    for (int j = 0; j < n; ++j) mu += xr[j];
    mu /= n;
    double var = 0;
    for (int j = 0; j < n; ++j) {
      const double d = xr[j] - mu;
      var += d * d;
    }
    var /= n;
    const double s = std::sqrt(var + eps);
    mu_s[2 * i] = mu;
    mu_s[2 * i + 1] = s;
    for (int j = 0; j < n; ++j) yr[j] = static_cast<T>((xr[j] - mu) / s);
  }
}
}  // namespace detail

// Row-wise layernorm without affine parameters (population variance, eps inside sqrt).
template <class T>
Tensor<T> layernorm_rows(const Tensor<T>& x, double eps = 1e-5) {
  const int m = x.ndim() == 2 ? x.dim(0) : 1;
  const int n = x.ndim() == 2 ? x.dim(1) : x.dim(0);
  auto stats = std::make_shared<std::vector<double>>(2 * static_cast<std::size_t>(m));
  Tensor<T> out = detail::make_op<T>(x.shape(), {x}, [m, n, stats](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < m; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * n;
      const double s = (*stats)[2 * static_cast<std::size_t>(i) + 1];
      double gmean = 0, gxmean = 0;
      for (int j = 0; j < n; ++j) {
        gmean += self.grad[off + j];
        gxmean += static_cast<double>(self.grad[off + j]) * self.val[off + j];
      }
      gmean /= n;
      gxmean /= n;
      for (int j = 0; j < n; ++j) {
        p.grad[off + j] += static_cast<T>((self.grad[off + j] - gmean - self.val[off + j] * gxmean) / s);
      }
    }
  });
  detail::layernorm_forward(x.values().data(), out.values().data(), stats->data(), m, n, eps);
  return out;
}

// Affine layernorm: gamma * xhat + beta.
template <class T>
Tensor<T> layernorm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5) {
  const int m = x.ndim() == 2 ? x.dim(0) : 1;
  const int n = x.ndim() == 2 ? x.dim(1) : x.dim(0);
  check(gamma.ndim() == 1 && gamma.dim(0) == n && beta.ndim() == 1 && beta.dim(0) == n, "layernorm: affine shape mismatch");
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto stats = std::make_shared<std::vector<double>>(2 * static_cast<std::size_t>(m));
  Tensor<T> out = detail::make_op<T>(x.shape(), {x, gamma, beta}, [m, n, xhat, stats](TensorNode<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    if (pg.requires_grad) {
      pg.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) pg.grad[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(i) * n + j] * (*xhat)[static_cast<std::size_t>(i) * n + j];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) pb.grad[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(i) * n + j];
    }
    if (px.requires_grad) {
      px.ensure_grad();
      for (int i = 0; i < m; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * n;
        const double s = (*stats)[2 * static_cast<std::size_t>(i) + 1];
        double gmean = 0, gxmean = 0;
        for (int j = 0; j < n; ++j) {
          const double gy = static_cast<double>(self.grad[off + j]) * pg.val[static_cast<std::size_t>(j)];
          gmean += gy;
          gxmean += gy * (*xhat)[off + j];
        }
        gmean /= n;
        gxmean /= n;
        for (int j = 0; j < n; ++j) {
          const double gy = static_cast<double>(self.grad[off + j]) * pg.val[static_cast<std::size_t>(j)];
          px.grad[off + j] += static_cast<T>((gy - gmean - (*xhat)[off + j] * gxmean) / s);
        }
      }
    }
  });
  detail::layernorm_forward(x.values().data(), xhat->data(), stats->data(), m, n, eps);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.values()[static_cast<std::size_t>(i) * n + j] =
          (*xhat)[static_cast<std::size_t>(i) * n + j] * gamma.values()[static_cast<std::size_t>(j)] + beta.values()[static_cast<std::size_t>(j)];
  return out;
}

// Row-wise L2 normalization (cosine-similarity prep); smooth at 0 via eps inside sqrt.
template <class T>
Tensor<T> normalize_rows(const Tensor<T>& x, double eps = 1e-12) {
  const int m = x.ndim() == 2 ? x.dim(0) : 1;
  const int n = x.ndim() == 2 ? x.dim(1) : x.dim(0);
  auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
  Tensor<T> out = detail::make_op<T>(x.shape(), {x}, [m, n, norms](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < m; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * n;
      const double nm = (*norms)[static_cast<std::size_t>(i)];
      double dot = 0;
      for (int j = 0; j < n; ++j) dot += static_cast<double>(self.grad[off + j]) * self.val[off + j];
      for (int j = 0; j < n; ++j) {
        p.grad[off + j] += static_cast<T>((self.grad[off + j] - self.val[off + j] * dot) / nm);
      }
    }
  });
  for (int i = 0; i < m; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * n;
    double ss = eps;
    for (int j = 0; j < n; ++j) ss += static_cast<double>(x.values()[off + j]) * x.values()[off + j];
    const double nm = std::sqrt(ss);
    (*norms)[static_cast<std::size_t>(i)] = nm;
    for (int j = 0; j < n; ++j) out.values()[off + j] = static_cast<T>(x.values()[off + j] / nm);
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolution / pooling
// ---------------------------------------------------------------------------

enum class Padding { Same, Valid };

// 1-D cross-correlation of a single-channel signal with out_ch filters.
// x: (len), w: (out_ch, k), b: (out_ch) -> (out_ch, out_len)
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Padding pad = Padding::Same) {
  check(x.ndim() == 1, "conv1d: signal must be 1-D");
  check(w.ndim() == 2 && b.ndim() == 1 && b.dim(0) == w.dim(0), "conv1d: filter shape mismatch");
  const int len = x.dim(0), oc = w.dim(0), k = w.dim(1);
  check(len >= 1, "conv1d: empty signal");
  int off, out_len;
  if (pad == Padding::Same) {
    off = -((k - 1) / 2);
    out_len = len;
  } else {
    check(len >= k, "conv1d: signal shorter than kernel");
    off = 0;
    out_len = len - k + 1;
  }
  Tensor<T> out = detail::make_op<T>({oc, out_len}, {x, w, b}, [len, oc, k, off, out_len](TensorNode<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    const bool gx = px.requires_grad, gw = pw.requires_grad, gb = pb.requires_grad;
    if (gx) px.ensure_grad();
    if (gw) pw.ensure_grad();
    if (gb) pb.ensure_grad();
    for (int o = 0; o < oc; ++o) {
      for (int t = 0; t < out_len; ++t) {
        const T g = self.grad[static_cast<std::size_t>(o) * out_len + t];
        if (g == T(0)) continue;
        if (gb) pb.grad[static_cast<std::size_t>(o)] += g;
        for (int j = 0; j < k; ++j) {
          const int src = t + off + j;
          if (src < 0 || src >= len) continue;
          if (gw) pw.grad[static_cast<std::size_t>(o) * k + j] += g * px.val[static_cast<std::size_t>(src)];
          if (gx) px.grad[static_cast<std::size_t>(src)] += g * pw.val[static_cast<std::size_t>(o) * k + j];
        }
      }
    }
  });
  for (int o = 0; o < oc; ++o) {
    for (int t = 0; t < out_len; ++t) {
      double acc = b.values()[static_cast<std::size_t>(o)];
      for (int j = 0; j < k; ++j) {
        const int src = t + off + j;
        if (src < 0 || src >= len) continue;
        acc += static_cast<double>(w.values()[static_cast<std::size_t>(o) * k + j]) * x.values()[static_cast<std::size_t>(src)];
      }
      out.values()[static_cast<std::size_t>(o) * out_len + t] = static_cast<T>(acc);
    }
  }
  return out;
}

// Global max over the time axis: (ch, len) -> (ch). First max wins on ties.
template <class T>
Tensor<T> maxpool_time(const Tensor<T>& y) {
  check(y.ndim() == 2, "maxpool_time: expects (channels, time)");
  const int ch = y.dim(0), len = y.dim(1);
  auto arg = std::make_shared<std::vector<int>>(static_cast<std::size_t>(ch));
  Tensor<T> out = detail::make_op<T>({ch}, {y}, [arg, len](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t o = 0; o < arg->size(); ++o) {
      p.grad[o * static_cast<std::size_t>(len) + static_cast<std::size_t>((*arg)[o])] += self.grad[o];
    }
  });
  for (int o = 0; o < ch; ++o) {
    const std::size_t offr = static_cast<std::size_t>(o) * len;
    int best = 0;
    for (int t = 1; t < len; ++t) {
      if (y.values()[offr + t] > y.values()[offr + best]) best = t;
    }
    (*arg)[static_cast<std::size_t>(o)] = best;
    out.values()[static_cast<std::size_t>(o)] = y.values()[offr + best];
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions / losses
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  Tensor<T> out = detail::make_op<T>({1}, {a}, [](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0];
  });
  double acc = 0;
  for (T v : a.values()) acc += v;
  out.values()[0] = static_cast<T>(acc);
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor<T> out = detail::make_op<T>({1}, {a}, [inv](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0] * static_cast<T>(inv);
  });
  double acc = 0;
  for (T v : a.values()) acc += v;
  out.values()[0] = static_cast<T>(acc * inv);
  return out;
}

// Column means of a matrix: (m, n) -> (n). Token pooling.
template <class T>
Tensor<T> mean_over_rows(const Tensor<T>& a) {
  check(a.ndim() == 2, "mean_over_rows: expects 2-D");
  const int m = a.dim(0), n = a.dim(1);
  const T inv = static_cast<T>(1.0 / m);
  Tensor<T> out = detail::make_op<T>({n}, {a}, [m, n, inv](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) p.grad[static_cast<std::size_t>(i) * n + j] += self.grad[static_cast<std::size_t>(j)] * inv;
  });
  for (int j = 0; j < n; ++j) {
    double acc = 0;
    for (int i = 0; i < m; ++i) acc += a.values()[static_cast<std::size_t>(i) * n + j];
    out.values()[static_cast<std::size_t>(j)] = static_cast<T>(acc / m);
  }
  return out;
}

template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "mse: shape mismatch");
  return mean(square(sub(a, b)));
}

// Weighted cross entropy over rows of logits; mean over the batch of
// w[label] * (-log softmax(logits)[label]).
template <class T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<int>& labels, const std::vector<double>& class_weights) {
  check(logits.ndim() == 2, "cross_entropy_rows: logits must be (batch, classes)");
  const int m = logits.dim(0), k = logits.dim(1);
  check(static_cast<int>(labels.size()) == m, "cross_entropy_rows: label count mismatch");
  check(static_cast<int>(class_weights.size()) == k, "cross_entropy_rows: weight count mismatch");
  for (int y : labels) check(0 <= y && y < k, "cross_entropy_rows: label out of range");
  auto lab = std::make_shared<std::vector<int>>(labels);
  auto wts = std::make_shared<std::vector<double>>(class_weights);
  Tensor<T> out = detail::make_op<T>({1}, {logits}, [m, k, lab, wts](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    const double g = static_cast<double>(self.grad[0]) / m;
    for (int i = 0; i < m; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * k;
      double mx = p.val[off];
      for (int j = 1; j < k; ++j) mx = std::max<double>(mx, p.val[off + j]);
      double z = 0;
      for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(p.val[off + j]) - mx);
      const double w = (*wts)[static_cast<std::size_t>((*lab)[static_cast<std::size_t>(i)])];
      for (int j = 0; j < k; ++j) {
        const double smax = std::exp(static_cast<double>(p.val[off + j]) - mx) / z;
        const double onehot = (j == (*lab)[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
        p.grad[off + j] += static_cast<T>(g * w * (smax - onehot));
      }
    }
  });
  double loss = 0;
  for (int i = 0; i < m; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * k;
    double mx = logits.values()[off];
    for (int j = 1; j < k; ++j) mx = std::max<double>(mx, logits.values()[off + j]);
    double z = 0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(logits.values()[off + j]) - mx);
    const int y = labels[static_cast<std::size_t>(i)];
    const double logp = static_cast<double>(logits.values()[static_cast<std::size_t>(i) * k + y]) - mx - std::log(z);
    loss -= class_weights[static_cast<std::size_t>(y)] * logp;
  }
  out.values()[0] = static_cast<T>(loss / m);
  return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <class T>
void backward(const Tensor<T>& loss) {
  check(loss.defined() && loss.size() == 1, "backward: loss must be a scalar");
  check(loss.requires_grad(), "backward: loss does not depend on any parameter");
  // Collect the reachable recorded subgraph.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<const TensorNode<T>*> seen;
  std::vector<TensorNode<T>*> stack{loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    TensorNode<T>* cur = stack.back();
    stack.pop_back();
    order.push_back(cur);
    for (const auto& p : cur->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  // Creation ids are strictly increasing, so descending id order is a
  // valid reverse topological order.
  std::sort(order.begin(), order.end(), [](const TensorNode<T>* a, const TensorNode<T>* b) { return a->id > b->id; });
  loss.node()->ensure_grad();
  loss.node()->grad[0] += T(1);
  for (TensorNode<T>* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace pmae
