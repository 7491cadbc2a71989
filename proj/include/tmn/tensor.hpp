#pragma once

// Dense n-d tensors with reverse-mode autodiff on a define-by-run tape.
// The scalar type is a template parameter: float for training, double for
// finite-difference gradient checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "tmn/rng.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace tmn {

// Activation buffers run 0.1-4 MB; keep them on the heap free lists instead
// of round-tripping through mmap on every tape node.
inline const bool kAllocatorTuned = [] {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 64 * 1024 * 1024);
#endif
  return true;
}();

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;  // grad-requiring inputs only
  std::function<void()> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
  void accumulate(const T* g, size_t n) {
    ensure_grad();
    for (size_t i = 0; i < n; ++i) grad[i] += g[i];
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static Tensor full(Shape shape, T v) {
    auto n = std::make_shared<TensorNode<T>>();
    n->value.assign(static_cast<size_t>(numel(shape)), v);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<T> data) {
    if (numel(shape) != static_cast<int64_t>(data.size()))
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not hold " +
                                  std::to_string(data.size()) + " values");
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(std::move(n));
  }

  static Tensor randn(Shape shape, std::mt19937_64& rng, T stddev = T(1)) {
    auto t = zeros(std::move(shape));
    for (auto& v : t.node_->value) v = static_cast<T>(normal(rng)) * stddev;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }

  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }
  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  T item() const {
    if (size() != 1) throw std::invalid_argument("item: tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  // Detach from the tape: a fresh leaf holding the same values.
  Tensor detach() const { return from(shape(), values()); }

  std::shared_ptr<TensorNode<T>> node() const { return node_; }

  // Reverse pass from a scalar. Grads accumulate; call zero_grad between
  // steps if accumulation is not wanted.
  void backward() const {
    if (size() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(shape()));
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> seen;
    std::vector<std::pair<TensorNode<T>*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [nd, idx] = stack.back();
      if (idx < nd->parents.size()) {
        TensorNode<T>* p = nd->parents[idx++].get();
        if (seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(nd);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn && !(*it)->grad.empty()) (*it)->backward_fn();
    }
  }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <typename T>
std::shared_ptr<TensorNode<T>> make_result(Shape shape, std::initializer_list<Tensor<T>> inputs) {
  auto n = std::make_shared<TensorNode<T>>();
  n->value.assign(static_cast<size_t>(numel(shape)), T(0));
  n->shape = std::move(shape);
  for (const auto& in : inputs) {
    if (in.requires_grad()) {
      n->requires_grad = true;
      n->parents.push_back(in.node());
    }
  }
  return n;
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "add");
  auto out = detail::make_result<T>(a.shape(), {a, b});
  const size_t n = out->value.size();
  const T* pa = a.data();
  const T* pb = b.data();
  for (size_t i = 0; i < n; ++i) out->value[i] = pa[i] + pb[i];
  if (out->requires_grad) {
    auto an = a.node();
    auto bn = b.node();
    TensorNode<T>* o = out.get();
    out->backward_fn = [o, an, bn] {
      if (an->requires_grad) an->accumulate(o->grad.data(), o->grad.size());
      if (bn->requires_grad) bn->accumulate(o->grad.data(), o->grad.size());
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "sub");
  auto out = detail::make_result<T>(a.shape(), {a, b});
  const size_t n = out->value.size();
  for (size_t i = 0; i < n; ++i) out->value[i] = a.data()[i] - b.data()[i];
  if (out->requires_grad) {
    auto an = a.node();
    auto bn = b.node();
    TensorNode<T>* o = out.get();
    out->backward_fn = [o, an, bn] {
      if (an->requires_grad) an->accumulate(o->grad.data(), o->grad.size());
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) bn->grad[i] -= o->grad[i];
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "mul");
  auto out = detail::make_result<T>(a.shape(), {a, b});
  const size_t n = out->value.size();
  for (size_t i = 0; i < n; ++i) out->value[i] = a.data()[i] * b.data()[i];
  if (out->requires_grad) {
    auto an = a.node();
    auto bn = b.node();
    TensorNode<T>* o = out.get();
    out->backward_fn = [o, an, bn] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) bn->grad[i] += o->grad[i] * an->value[i];
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  auto out = detail::make_result<T>(a.shape(), {a});
  const size_t n = out->value.size();
  for (size_t i = 0; i < n; ++i) out->value[i] = a.data()[i] * s;
  if (out->requires_grad) {
    auto an = a.node();
    TensorNode<T>* o = out.get();
    out->backward_fn = [o, an, s] {
      an->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i] * s;
    };
  }
  return Tensor<T>(out);
}

// x[..., d] + b[d]
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (b.rank() != 1 || x.rank() < 1 || x.shape().back() != b.dim(0))
    throw std::invalid_argument("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(b.shape()));
  auto out = detail::make_result<T>(x.shape(), {x, b});
  const int64_t d = b.dim(0);
  const int64_t rows = x.size() / d;
  for (int64_t r = 0; r < rows; ++r) {
    const T* px = x.data() + r * d;
    const T* pb = b.data();
    T* po = out->value.data() + r * d;
    for (int64_t j = 0; j < d; ++j) po[j] = px[j] + pb[j];
  }
  if (out->requires_grad) {
    auto xn = x.node();
    auto bn = b.node();
    TensorNode<T>* o = out.get();
    out->backward_fn = [o, xn, bn, rows, d] {
      if (xn->requires_grad) xn->accumulate(o->grad.data(), o->grad.size());
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d; ++j) bn->grad[static_cast<size_t>(j)] += o->grad[static_cast<size_t>(r * d + j)];
      }
    };
  }
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                                " changes element count");
  auto out = detail::make_result<T>(shape, {x});
  out->value = x.values();
  if (out->requires_grad) {
    auto xn = x.node();
    TensorNode<T>* o = out.get();
    out->backward_fn = [o, xn] { xn->accumulate(o->grad.data(), o->grad.size()); };
  }
  return Tensor<T>(out);
}

// slice along `axis`: keeps [start, start+len)
template <typename T>
Tensor<T> slice_axis(const Tensor<T>& x, int axis, int64_t start, int64_t len) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= x.rank() || start < 0 || len < 0 || start + len > s[static_cast<size_t>(axis)])
    throw std::invalid_argument("slice_axis: invalid range on " + shape_str(s));
  Shape os = s;
  os[static_cast<size_t>(axis)] = len;
  auto out = detail::make_result<T>(os, {x});
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<size_t>(i)];
  const int64_t ax = s[static_cast<size_t>(axis)];
  for (int64_t o = 0; o < outer; ++o) {
    const T* src = x.data() + (o * ax + start) * inner;
    T* dst = out->value.data() + o * len * inner;
    std::copy(src, src + len * inner, dst);
  }
  if (out->requires_grad) {
    auto xn = x.node();
    TensorNode<T>* on = out.get();
    out->backward_fn = [on, xn, outer, inner, ax, start, len] {
      xn->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        T* dst = xn->grad.data() + (o * ax + start) * inner;
        const T* src = on->grad.data() + o * len * inner;
        for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> concat_axis(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat_axis: no inputs");
  const Shape& s0 = parts[0].shape();
  Shape os = s0;
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) throw std::invalid_argument("concat_axis: rank mismatch");
    for (int i = 0; i < p.rank(); ++i)
      if (i != axis && p.shape()[static_cast<size_t>(i)] != s0[static_cast<size_t>(i)])
        throw std::invalid_argument("concat_axis: shape mismatch " + shape_str(p.shape()) + " vs " +
                                    shape_str(s0));
    total += p.dim(axis);
  }
  os[static_cast<size_t>(axis)] = total;
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = os;
  node->value.assign(static_cast<size_t>(numel(os)), T(0));
  for (const auto& p : parts)
    if (p.requires_grad()) {
      node->requires_grad = true;
      node->parents.push_back(p.node());
    }
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= os[static_cast<size_t>(i)];
  for (int i = axis + 1; i < static_cast<int>(os.size()); ++i) inner *= os[static_cast<size_t>(i)];
  std::vector<int64_t> offsets;  // running offset along axis
  {
    int64_t off = 0;
    for (const auto& p : parts) {
      offsets.push_back(off);
      const int64_t plen = p.dim(axis);
      for (int64_t o = 0; o < outer; ++o) {
        const T* src = p.data() + o * plen * inner;
        T* dst = node->value.data() + (o * total + off) * inner;
        std::copy(src, src + plen * inner, dst);
      }
      off += plen;
    }
  }
  if (node->requires_grad) {
    std::vector<std::shared_ptr<TensorNode<T>>> srcs;
    std::vector<int64_t> lens;
    for (const auto& p : parts) {
      srcs.push_back(p.node());
      lens.push_back(p.dim(axis));
    }
    TensorNode<T>* on = node.get();
    node->backward_fn = [on, srcs, lens, offsets, outer, inner, total] {
      for (size_t k = 0; k < srcs.size(); ++k) {
        if (!srcs[k]->requires_grad) continue;
        srcs[k]->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
          const T* src = on->grad.data() + (o * total + offsets[k]) * inner;
          T* dst = srcs[k]->grad.data() + o * lens[k] * inner;
          for (int64_t i = 0; i < lens[k] * inner; ++i) dst[i] += src[i];
        }
      }
    };
  }
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw std::invalid_argument("permute: rank mismatch");
  Shape os(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) os[static_cast<size_t>(i)] = x.shape()[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  auto out = detail::make_result<T>(os, {x});

  std::vector<int64_t> in_strides(static_cast<size_t>(r), 1), out_strides(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * x.shape()[static_cast<size_t>(i + 1)];
  for (int i = r - 2; i >= 0; --i)
    out_strides[static_cast<size_t>(i)] = out_strides[static_cast<size_t>(i + 1)] * os[static_cast<size_t>(i + 1)];

  // stride of each output axis in the input layout
  std::vector<int64_t> gather(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) gather[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];

  const int64_t n = x.size();
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  const T* src = x.data();
  T* dst = out->value.data();
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t in_off = 0;
    int64_t rem = flat;
    for (int i = 0; i < r; ++i) {
      const int64_t q = rem / out_strides[static_cast<size_t>(i)];
      rem -= q * out_strides[static_cast<size_t>(i)];
      in_off += q * gather[static_cast<size_t>(i)];
    }
    dst[flat] = src[in_off];
  }
  if (out->requires_grad) {
    auto xn = x.node();
    TensorNode<T>* on = out.get();
    out->backward_fn = [on, xn, out_strides, gather, n, r] {
      xn->ensure_grad();
      for (int64_t flat = 0; flat < n; ++flat) {
        int64_t in_off = 0;
        int64_t rem = flat;
        for (int i = 0; i < r; ++i) {
          const int64_t q = rem / out_strides[static_cast<size_t>(i)];
          rem -= q * out_strides[static_cast<size_t>(i)];
          in_off += q * gather[static_cast<size_t>(i)];
        }
        xn->grad[static_cast<size_t>(in_off)] += on->grad[static_cast<size_t>(flat)];
      }
    };
  }
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  auto out = detail::make_result<T>(Shape{1}, {x});
  T acc = T(0);
  for (int64_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  out->value[0] = acc;
  if (out->requires_grad) {
    auto xn = x.node();
    TensorNode<T>* on = out.get();
    out->backward_fn = [on, xn] {
      xn->ensure_grad();
      const T g = on->grad[0];
      for (auto& v : xn->grad) v += g;
    };
  }
  return Tensor<T>(out);
}

// mean over one axis, axis removed from the shape
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= x.rank()) throw std::invalid_argument("mean_axis: bad axis");
  Shape os;
  for (int i = 0; i < x.rank(); ++i)
    if (i != axis) os.push_back(s[static_cast<size_t>(i)]);
  if (os.empty()) os = {1};
  auto out = detail::make_result<T>(os, {x});
  int64_t outer = 1, inner = 1;
  const int64_t ax = s[static_cast<size_t>(axis)];
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<size_t>(i)];
  const T inv = T(1) / static_cast<T>(ax);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t a = 0; a < ax; ++a) {
      const T* src = x.data() + (o * ax + a) * inner;
      T* dst = out->value.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i] * inv;
    }
  if (out->requires_grad) {
    auto xn = x.node();
    TensorNode<T>* on = out.get();
    out->backward_fn = [on, xn, outer, inner, ax, inv] {
      xn->ensure_grad();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t a = 0; a < ax; ++a) {
          T* dst = xn->grad.data() + (o * ax + a) * inner;
          const T* src = on->grad.data() + o * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += src[i] * inv;
        }
    };
  }
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// matmul family. Leading batch dimensions must match exactly, or one operand
// is rank-2 and is shared across the batch. No other broadcasting.

namespace detail {

// lane-blocked dot product: independent accumulators keep the loop
// vectorizable without reassociating a single scalar reduction
template <typename T>
inline T dot_span(const T* __restrict a, const T* __restrict b, int64_t n) {
  constexpr int64_t kLanes = 16;
  T acc[kLanes] = {};
  int64_t p = 0;
  for (; p + kLanes <= n; p += kLanes)
    for (int64_t u = 0; u < kLanes; ++u) acc[u] += a[p + u] * b[p + u];
  T total = T(0);
  for (; p < n; ++p) total += a[p] * b[p];
  for (int64_t u = 0; u < kLanes; ++u) total += acc[u];
  return total;
}

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* __restrict a, const T* __restrict b, T* __restrict c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* __restrict a, const T* __restrict b, T* __restrict c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) ci[j] += dot_span(ai, b + j * k, k);
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(const T* __restrict a, const T* __restrict b, T* __restrict c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const T av = ai[p];
      T* cp = c + p * n;
      for (int64_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

struct MatmulDims {
  int64_t batch = 1;  // product of leading dims
  int64_t m = 0, k = 0, n = 0;
  bool a_batched = false, b_batched = false;
  Shape out_shape;
};

inline MatmulDims matmul_dims(const Shape& a, const Shape& b, bool b_transposed, const char* op) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument(std::string(op) + ": operands must be at least rank 2, got " + shape_str(a) +
                                " and " + shape_str(b));
  MatmulDims d;
  d.m = a[a.size() - 2];
  d.k = a[a.size() - 1];
  const int64_t bk = b_transposed ? b[b.size() - 1] : b[b.size() - 2];
  d.n = b_transposed ? b[b.size() - 2] : b[b.size() - 1];
  if (d.k != bk)
    throw std::invalid_argument(std::string(op) + ": inner dimensions disagree: " + shape_str(a) + " vs " +
                                shape_str(b));
  Shape abatch(a.begin(), a.end() - 2), bbatch(b.begin(), b.end() - 2);
  if (!abatch.empty() && !bbatch.empty() && abatch != bbatch)
    throw std::invalid_argument(std::string(op) + ": batch dimensions disagree: " + shape_str(a) + " vs " +
                                shape_str(b));
  const Shape& batch = abatch.empty() ? bbatch : abatch;
  d.batch = numel(batch);
  d.a_batched = !abatch.empty();
  d.b_batched = !bbatch.empty();
  d.out_shape = batch;
  d.out_shape.push_back(d.m);
  d.out_shape.push_back(d.n);
  return d;
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  auto d = detail::matmul_dims(a.shape(), b.shape(), false, "matmul");
  // a shared right operand folds the batch into one tall matrix
  if (!d.b_batched && d.batch > 1) {
    d.m *= d.batch;
    d.batch = 1;
  }
  auto out = detail::make_result<T>(d.out_shape, {a, b});
  for (int64_t bi = 0; bi < d.batch; ++bi) {
    const T* pa = a.data() + (d.a_batched ? bi * d.m * d.k : 0);
    const T* pb = b.data() + (d.b_batched ? bi * d.k * d.n : 0);
    detail::gemm_nn(pa, pb, out->value.data() + bi * d.m * d.n, d.m, d.k, d.n);
  }
  if (out->requires_grad) {
    auto an = a.node();
    auto bn = b.node();
    TensorNode<T>* on = out.get();
    out->backward_fn = [on, an, bn, d] {
      for (int64_t bi = 0; bi < d.batch; ++bi) {
        const T* g = on->grad.data() + bi * d.m * d.n;
        if (an->requires_grad) {
          an->ensure_grad();
          T* ga = an->grad.data() + (d.a_batched ? bi * d.m * d.k : 0);
          const T* pb = bn->value.data() + (d.b_batched ? bi * d.k * d.n : 0);
          detail::gemm_nt(g, pb, ga, d.m, d.n, d.k);  // dA = G * B^T
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          T* gb = bn->grad.data() + (d.b_batched ? bi * d.k * d.n : 0);
          const T* pa = an->value.data() + (d.a_batched ? bi * d.m * d.k : 0);
          detail::gemm_tn(pa, g, gb, d.m, d.k, d.n);  // dB = A^T * G
        }
      }
    };
  }
  return Tensor<T>(out);
}

// a[..,m,k] x b[..,n,k]^T -> [..,m,n]
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  auto d = detail::matmul_dims(a.shape(), b.shape(), true, "matmul_nt");
  auto out = detail::make_result<T>(d.out_shape, {a, b});
  for (int64_t bi = 0; bi < d.batch; ++bi) {
    const T* pa = a.data() + (d.a_batched ? bi * d.m * d.k : 0);
    const T* pb = b.data() + (d.b_batched ? bi * d.n * d.k : 0);
    detail::gemm_nt(pa, pb, out->value.data() + bi * d.m * d.n, d.m, d.k, d.n);
  }
  if (out->requires_grad) {
    auto an = a.node();
    auto bn = b.node();
    TensorNode<T>* on = out.get();
    out->backward_fn = [on, an, bn, d] {
      for (int64_t bi = 0; bi < d.batch; ++bi) {
        const T* g = on->grad.data() + bi * d.m * d.n;
        if (an->requires_grad) {
          an->ensure_grad();
          T* ga = an->grad.data() + (d.a_batched ? bi * d.m * d.k : 0);
          const T* pb = bn->value.data() + (d.b_batched ? bi * d.n * d.k : 0);
          detail::gemm_nn(g, pb, ga, d.m, d.n, d.k);  // dA = G * B
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          T* gb = bn->grad.data() + (d.b_batched ? bi * d.n * d.k : 0);
          const T* pa = an->value.data() + (d.a_batched ? bi * d.m * d.k : 0);
          detail::gemm_tn(g, pa, gb, d.m, d.n, d.k);  // dB = G^T * A
        }
      }
    };
  }
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// nn ops

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= x.rank()) throw std::invalid_argument("softmax: bad axis for " + shape_str(s));
  auto out = detail::make_result<T>(s, {x});
  int64_t outer = 1, inner = 1;
  const int64_t ax = s[static_cast<size_t>(axis)];
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<size_t>(i)];
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      const T* px = x.data() + o * ax * inner + i;
      T* po = out->value.data() + o * ax * inner + i;
      T mx = px[0];
      for (int64_t a = 1; a < ax; ++a) mx = std::max(mx, px[a * inner]);
      T z = T(0);
      for (int64_t a = 0; a < ax; ++a) {
        const T e = std::exp(px[a * inner] - mx);
        po[a * inner] = e;
        z += e;
      }
      const T inv = T(1) / z;
      for (int64_t a = 0; a < ax; ++a) po[a * inner] *= inv;
    }
  if (out->requires_grad) {
    auto xn = x.node();
    TensorNode<T>* on = out.get();
    out->backward_fn = [on, xn, outer, inner, ax] {
      xn->ensure_grad();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
          const T* py = on->value.data() + o * ax * inner + i;
          const T* pg = on->grad.data() + o * ax * inner + i;
          T* px = xn->grad.data() + o * ax * inner + i;
          T dot = T(0);
          for (int64_t a = 0; a < ax; ++a) dot += py[a * inner] * pg[a * inner];
          for (int64_t a = 0; a < ax; ++a) px[a * inner] += py[a * inner] * (pg[a * inner] - dot);
        }
    };
  }
  return Tensor<T>(out);
}

// per-vector normalization over the last axis, then gain*x + bias
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const int64_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw std::invalid_argument("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  auto out = detail::make_result<T>(x.shape(), {x, gain, bias});
  const int64_t rows = x.size() / d;
  std::vector<T> inv_std(static_cast<size_t>(rows));
  std::vector<T> norm(static_cast<size_t>(x.size()));  // pre-affine normalized values
  for (int64_t r = 0; r < rows; ++r) {
    const T* px = x.data() + r * d;
    T mean = T(0);
    for (int64_t j = 0; j < d; ++j) mean += px[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (int64_t j = 0; j < d; ++j) {
      const T c = px[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    T* pn = norm.data() + r * d;
    T* po = out->value.data() + r * d;
    for (int64_t j = 0; j < d; ++j) {
      pn[j] = (px[j] - mean) * is;
      po[j] = gain.data()[j] * pn[j] + bias.data()[j];
    }
  }
  if (out->requires_grad) {
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    TensorNode<T>* on = out.get();
    out->backward_fn = [on, xn, gn, bn, rows, d, inv_std = std::move(inv_std), norm = std::move(norm)] {
      for (int64_t r = 0; r < rows; ++r) {
        const T* g = on->grad.data() + r * d;
        const T* pn = norm.data() + r * d;
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (int64_t j = 0; j < d; ++j) gn->grad[static_cast<size_t>(j)] += g[j] * pn[j];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int64_t j = 0; j < d; ++j) bn->grad[static_cast<size_t>(j)] += g[j];
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          // dx = (gy - mean(gy) - n * mean(gy*n)) * inv_std, gy = gain * dout
          T mean_gy = T(0), mean_gyn = T(0);
          for (int64_t j = 0; j < d; ++j) {
            const T gy = gn->value[static_cast<size_t>(j)] * g[j];
            mean_gy += gy;
            mean_gyn += gy * pn[j];
          }
          mean_gy /= static_cast<T>(d);
          mean_gyn /= static_cast<T>(d);
          T* gx = xn->grad.data() + r * d;
          const T is = inv_std[static_cast<size_t>(r)];
          for (int64_t j = 0; j < d; ++j) {
            const T gy = gn->value[static_cast<size_t>(j)] * g[j];
            gx[j] += (gy - mean_gy - pn[j] * mean_gyn) * is;
          }
        }
      }
    };
  }
  return Tensor<T>(out);
}

namespace detail {

// tanh-form gelu on a rational tanh; polynomial arithmetic only, so the
// loops vectorize. tanh_pade is exact to ~1e-6 for |u| < 4 and clamps beyond.
template <typename T>
inline void tanh_pade(T u, T* t, T* dt) {
  const T a0 = T(135135), a1 = T(17325), a2 = T(378);
  const T b0 = T(135135), b1 = T(62370), b2 = T(3150), b3 = T(28);
  // saturate via clamp: branch-free, and the derivative is zero outside
  const T lim = T(4.9);
  const T inside = (u <= lim && u >= -lim) ? T(1) : T(0);
  u = std::min(lim, std::max(-lim, u));
  const T s = u * u;
  const T p = a0 + s * (a1 + s * (a2 + s));
  const T dp = a1 + s * (T(2) * a2 + T(3) * s);  // dP/ds
  const T d = b0 + s * (b1 + s * (b2 + s * b3));
  const T dd = b1 + s * (T(2) * b2 + T(3) * b3 * s);  // dD/ds
  const T inv_d = T(1) / d;
  *t = u * p * inv_d;
  // d/du [uP/D] = (P + 2s dP) / D - uP * (2u dD) / D^2
  *dt = inside * ((p + T(2) * s * dp) * inv_d - (*t) * T(2) * u * dd * inv_d);
}

template <typename T>
inline void gelu_point(T x, T* y, T* dy) {
  const T c1 = T(0.7978845608028654);  // sqrt(2/pi)
  const T c2 = T(0.044715);
  const T u = c1 * x * (T(1) + c2 * x * x);
  T t, dt;
  tanh_pade(u, &t, &dt);
  const T du = c1 * (T(1) + T(3) * c2 * x * x);
  *y = T(0.5) * x * (T(1) + t);
  *dy = T(0.5) * (T(1) + t) + T(0.5) * x * dt * du;
}

}  // namespace detail

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  auto out = detail::make_result<T>(x.shape(), {x});
  const int64_t n = x.size();
  const T* px = x.data();
  T* po = out->value.data();
  for (int64_t i = 0; i < n; ++i) {
    T y, dy;
    detail::gelu_point(px[i], &y, &dy);
    po[i] = y;
    (void)dy;
  }
  if (out->requires_grad) {
    auto xn = x.node();
    TensorNode<T>* on = out.get();
    out->backward_fn = [on, xn, n] {
      xn->ensure_grad();
      const T* px = xn->value.data();
      T* gx = xn->grad.data();
      const T* go = on->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        T y, dy;
        detail::gelu_point(px[i], &y, &dy);
        gx[i] += go[i] * dy;
      }
    };
  }
  return Tensor<T>(out);
}

// Fused multi-head self-attention: q,k,v are [B,T,d] with heads laid out as
// d = n_heads * dk column blocks. Computes per-head scaled-dot scores,
// softmax rows and the context in one op; no head permutes are materialized.
// When probs_out is set it receives the [B,H,T,T] attention weights.
template <typename T>
Tensor<T> attention_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int64_t n_heads,
                         std::vector<T>* probs_out = nullptr) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape())
    throw std::invalid_argument("attention: q/k/v must share [B,T,d], got " + shape_str(q.shape()) + ", " +
                                shape_str(k.shape()) + ", " + shape_str(v.shape()));
  const int64_t b = q.dim(0), t = q.dim(1), d = q.dim(2);
  if (d % n_heads != 0)
    throw std::invalid_argument("attention: width " + std::to_string(d) + " not divisible by " +
                                std::to_string(n_heads) + " heads");
  const int64_t dk = d / n_heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));

  auto out = detail::make_result<T>(q.shape(), {q, k, v});
  std::vector<T> probs(static_cast<size_t>(b * n_heads * t * t));

  for (int64_t bi = 0; bi < b; ++bi) {
    const T* qb = q.data() + bi * t * d;
    const T* kb = k.data() + bi * t * d;
    const T* vb = v.data() + bi * t * d;
    T* ob = out->value.data() + bi * t * d;
    for (int64_t h = 0; h < n_heads; ++h) {
      const int64_t off = h * dk;
      T* ph = probs.data() + (bi * n_heads + h) * t * t;
      for (int64_t i = 0; i < t; ++i) {
        T* row = ph + i * t;
        const T* qi = qb + i * d + off;
        T mx = -std::numeric_limits<T>::infinity();
        for (int64_t j = 0; j < t; ++j) {
          row[j] = detail::dot_span(qi, kb + j * d + off, dk) * scale;
          mx = std::max(mx, row[j]);
        }
        T z = T(0);
        for (int64_t j = 0; j < t; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        const T inv = T(1) / z;
        for (int64_t j = 0; j < t; ++j) row[j] *= inv;
        T* oi = ob + i * d + off;
        for (int64_t j = 0; j < t; ++j) {
          const T p = row[j];
          const T* vj = vb + j * d + off;
          for (int64_t c = 0; c < dk; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  if (probs_out) *probs_out = probs;

  if (out->requires_grad) {
    auto qn = q.node();
    auto kn = k.node();
    auto vn = v.node();
    TensorNode<T>* on = out.get();
    out->backward_fn = [on, qn, kn, vn, b, t, d, n_heads, dk, scale, probs = std::move(probs)] {
      qn->ensure_grad();
      kn->ensure_grad();
      vn->ensure_grad();
      std::vector<T> dp(static_cast<size_t>(t));
      for (int64_t bi = 0; bi < b; ++bi) {
        const T* qb = qn->value.data() + bi * t * d;
        const T* kb = kn->value.data() + bi * t * d;
        const T* vb = vn->value.data() + bi * t * d;
        const T* gb = on->grad.data() + bi * t * d;
        T* gq = qn->grad.data() + bi * t * d;
        T* gk = kn->grad.data() + bi * t * d;
        T* gv = vn->grad.data() + bi * t * d;
        for (int64_t h = 0; h < n_heads; ++h) {
          const int64_t off = h * dk;
          const T* ph = probs.data() + (bi * n_heads + h) * t * t;
          for (int64_t i = 0; i < t; ++i) {
            const T* row = ph + i * t;
            const T* gi = gb + i * d + off;
            // dV += p^T * g ; dp = g . v
            T dot = T(0);
            for (int64_t j = 0; j < t; ++j) {
              const T acc = detail::dot_span(gi, vb + j * d + off, dk);
              dp[static_cast<size_t>(j)] = acc;
              dot += acc * row[j];
              T* gvj = gv + j * d + off;
              const T p = row[j];
              for (int64_t c = 0; c < dk; ++c) gvj[c] += p * gi[c];
            }
            // softmax backward then score grads
            const T* qi = qb + i * d + off;
            T* gqi = gq + i * d + off;
            for (int64_t j = 0; j < t; ++j) {
              const T ds = row[j] * (dp[static_cast<size_t>(j)] - dot) * scale;
              const T* kj = kb + j * d + off;
              T* gkj = gk + j * d + off;
              for (int64_t c = 0; c < dk; ++c) {
                gqi[c] += ds * kj[c];
                gkj[c] += ds * qi[c];
              }
            }
          }
        }
      }
    };
  }
  return Tensor<T>(out);
}

// mean negative log-softmax of the true class; logits [batch, C]
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be [batch, C], got " + shape_str(logits.shape()));
  const int64_t batch = logits.dim(0), c = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != batch)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                                std::to_string(batch));
  for (int l : labels)
    if (l < 0 || l >= c)
      throw std::out_of_range("cross_entropy: label " + std::to_string(l) + " outside [0," + std::to_string(c) + ")");
  auto out = detail::make_result<T>(Shape{1}, {logits});
  std::vector<T> probs(static_cast<size_t>(batch * c));
  T loss = T(0);
  for (int64_t i = 0; i < batch; ++i) {
    const T* pl = logits.data() + i * c;
    T* pp = probs.data() + i * c;
    T mx = pl[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, pl[j]);
    T z = T(0);
    for (int64_t j = 0; j < c; ++j) {
      pp[j] = std::exp(pl[j] - mx);
      z += pp[j];
    }
    const T inv = T(1) / z;
    for (int64_t j = 0; j < c; ++j) pp[j] *= inv;
    loss -= std::log(std::max(pp[labels[static_cast<size_t>(i)]], std::numeric_limits<T>::min()));
  }
  out->value[0] = loss / static_cast<T>(batch);
  if (out->requires_grad) {
    auto ln = logits.node();
    TensorNode<T>* on = out.get();
    out->backward_fn = [on, ln, labels, batch, c, probs = std::move(probs)] {
      ln->ensure_grad();
      const T g = on->grad[0] / static_cast<T>(batch);
      for (int64_t i = 0; i < batch; ++i) {
        const T* pp = probs.data() + i * c;
        T* pg = ln->grad.data() + i * c;
        for (int64_t j = 0; j < c; ++j) pg[j] += g * pp[j];
        pg[labels[static_cast<size_t>(i)]] -= g;
      }
    };
  }
  return Tensor<T>(out);
}

// rows of `table` gathered by id; out[i,:] = table[ids[i],:]
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw std::invalid_argument("embedding: table must be [V, d]");
  const int64_t v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw std::out_of_range("embedding: id " + std::to_string(id) + " outside vocabulary of " + std::to_string(v));
  auto out = detail::make_result<T>(Shape{static_cast<int64_t>(ids.size()), d}, {table});
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(table.data() + ids[i] * d, table.data() + (ids[i] + 1) * d, out->value.data() + static_cast<int64_t>(i) * d);
  if (out->requires_grad) {
    auto tn = table.node();
    TensorNode<T>* on = out.get();
    out->backward_fn = [on, tn, ids, d] {
      tn->ensure_grad();
      for (size_t i = 0; i < ids.size(); ++i) {
        const T* src = on->grad.data() + static_cast<int64_t>(i) * d;
        T* dst = tn->grad.data() + ids[i] * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  }
  return Tensor<T>(out);
}

// inverted dropout; identity when p == 0
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, std::mt19937_64& rng) {
  if (p <= T(0)) return x;
  if (p >= T(1)) throw std::invalid_argument("dropout: p must be < 1");
  auto out = detail::make_result<T>(x.shape(), {x});
  std::vector<T> mask(static_cast<size_t>(x.size()));
  const T keep_scale = T(1) / (T(1) - p);
  for (int64_t i = 0; i < x.size(); ++i) {
    mask[static_cast<size_t>(i)] = (uniform_real(rng) < static_cast<double>(p)) ? T(0) : keep_scale;
    out->value[static_cast<size_t>(i)] = x.data()[i] * mask[static_cast<size_t>(i)];
  }
  if (out->requires_grad) {
    auto xn = x.node();
    TensorNode<T>* on = out.get();
    out->backward_fn = [on, xn, mask = std::move(mask)] {
      xn->ensure_grad();
      for (size_t i = 0; i < mask.size(); ++i) xn->grad[i] += on->grad[i] * mask[i];
    };
  }
  return Tensor<T>(out);
}

// x[.., d_in] * w[d_in, d_out] + b[d_out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_bias(matmul(x, w), b);
}

}  // namespace tmn
