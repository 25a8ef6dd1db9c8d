#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "mambapupil/gemm.hpp"
#include "mambapupil/tensor.hpp"

// Differentiable tensor primitives: broadcasting arithmetic, activations,
// reductions, shape manipulation and matrix products.
namespace mambapupil {

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const int da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const int db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `in` expressed over `out`'s index space (0 on broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t s = 1;
  const std::size_t off = out.size() - in.size();
  for (std::size_t i = in.size(); i-- > 0;) {
    if (in[i] != 1) strides[i + off] = s;
    s *= static_cast<std::size_t>(in[i]);
  }
  return strides;
}

/// Calls fn(out_index, a_index, b_index) over the broadcast output.
template <typename Fn>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
  const std::size_t n = shape_numel(out);
  if (a == out && b == out) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  const std::size_t na = shape_numel(a);
  const std::size_t nb = shape_numel(b);
  auto is_suffix = [&](const Shape& s) {
    if (s.size() > out.size()) return false;
    return std::equal(s.begin(), s.end(), out.end() - static_cast<std::ptrdiff_t>(s.size()));
  };
  if (a == out && is_suffix(b)) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i % nb);
    return;
  }
  if (b == out && is_suffix(a)) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i % na, i);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  std::vector<int> idx(out.size(), 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (std::size_t d = out.size(); d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * static_cast<std::size_t>(out[d]);
      ib -= sb[d] * static_cast<std::size_t>(out[d]);
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul, div };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out = make_result<T>(out_shape, {&a, &b});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();
  switch (kind) {
    case BinaryKind::add:
      for_each_broadcast(out_shape, a.shape(), b.shape(),
                         [&](std::size_t i, std::size_t ia, std::size_t ib) { po[i] = pa[ia] + pb[ib]; });
      break;
    case BinaryKind::sub:
      for_each_broadcast(out_shape, a.shape(), b.shape(),
                         [&](std::size_t i, std::size_t ia, std::size_t ib) { po[i] = pa[ia] - pb[ib]; });
      break;
    case BinaryKind::mul:
      for_each_broadcast(out_shape, a.shape(), b.shape(),
                         [&](std::size_t i, std::size_t ia, std::size_t ib) { po[i] = pa[ia] * pb[ib]; });
      break;
    case BinaryKind::div:
      for_each_broadcast(out_shape, a.shape(), b.shape(),
                         [&](std::size_t i, std::size_t ia, std::size_t ib) { po[i] = pa[ia] / pb[ib]; });
      break;
  }
  if (out.requires_grad()) {
    out.node()->backward = [kind](TensorNode<T>& self) {
      auto& na = *self.inputs[0];
      auto& nb = *self.inputs[1];
      const T* g = self.grad.data();
      const T* va = na.data.data();
      const T* vb = nb.data.data();
      T* ga = na.requires_grad ? na.ensure_grad().data() : nullptr;
      T* gb = nb.requires_grad ? nb.ensure_grad().data() : nullptr;
      for_each_broadcast(self.shape, na.shape, nb.shape,
                         [&](std::size_t i, std::size_t ia, std::size_t ib) {
                           switch (kind) {
                             case BinaryKind::add:
                               if (ga) ga[ia] += g[i];
                               if (gb) gb[ib] += g[i];
                               break;
                             case BinaryKind::sub:
                               if (ga) ga[ia] += g[i];
                               if (gb) gb[ib] -= g[i];
                               break;
                             case BinaryKind::mul:
                               if (ga) ga[ia] += g[i] * vb[ib];
                               if (gb) gb[ib] += g[i] * va[ia];
                               break;
                             case BinaryKind::div:
                               if (ga) ga[ia] += g[i] / vb[ib];
                               if (gb) gb[ib] -= g[i] * va[ia] / (vb[ib] * vb[ib]);
                               break;
                           }
                         });
    };
  }
  return out;
}

/// Elementwise map with derivative expressed through (x, y).
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  Tensor<T> out = make_result<T>(x.shape(), {&x});
  const T* px = x.data().data();
  T* po = out.data().data();
  for (std::size_t i = 0; i < x.numel(); ++i) po[i] = f(px[i]);
  if (out.requires_grad()) {
    out.node()->backward = [df](TensorNode<T>& self) {
      auto& in = *self.inputs[0];
      auto& gi = in.ensure_grad();
      for (std::size_t i = 0; i < self.data.size(); ++i) {
        gi[i] += self.grad[i] * df(in.data[i], self.data[i]);
      }
    };
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic (numpy-style broadcasting)

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::add);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::sub);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::mul);
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::div);
}
template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}
/// 1 - x, the complement used by gated updates.
template <typename T>
Tensor<T> one_minus(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return T(1) - v; }, [](T, T) { return T(-1); });
}
template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return sigmoid_scalar(v); },
                       [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

/// log(1 + e^x); softplus(-inf) = 0 exactly.
template <typename T>
T softplus_scalar(T v) {
  return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return softplus_scalar(v); },
                       [](T v, T) { return sigmoid_scalar(v); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tensor<T> out = detail::make_result<T>(Shape{1}, {&x});
  T acc = 0;
  for (T v : x.data()) acc += v;
  out[0] = acc;
  if (out.requires_grad()) {
    out.node()->backward = [](TensorNode<T>& self) {
      auto& gi = self.inputs[0]->ensure_grad();
      for (auto& g : gi) g += self.grad[0];
    };
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Sums over the last axis; rank-1 input yields shape (1).
template <typename T>
Tensor<T> sum_last(const Tensor<T>& x) {
  const std::size_t inner = static_cast<std::size_t>(x.dim(-1));
  const std::size_t outer = x.numel() / inner;
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  if (shape.empty()) shape = {1};
  Tensor<T> out = detail::make_result<T>(shape, {&x});
  const T* px = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    T acc = 0;
    for (std::size_t i = 0; i < inner; ++i) acc += px[o * inner + i];
    out[o] = acc;
  }
  if (out.requires_grad()) {
    out.node()->backward = [inner, outer](TensorNode<T>& self) {
      auto& gi = self.inputs[0]->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) gi[o * inner + i] += self.grad[o];
    };
  }
  return out;
}

template <typename T>
Tensor<T> mean_last(const Tensor<T>& x) {
  return scale(sum_last(x), T(1) / static_cast<T>(x.dim(-1)));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor<T> out = detail::make_result<T>(std::move(shape), {&x});
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  if (out.requires_grad()) {
    out.node()->backward = [](TensorNode<T>& self) {
      auto& gi = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
    };
  }
  return out;
}

namespace detail {

struct AxisSplit {
  std::size_t outer, extent, inner;
};

inline AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s{1, static_cast<std::size_t>(shape[static_cast<std::size_t>(axis)]), 1};
  for (int i = 0; i < axis; ++i) s.outer *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
    s.inner *= static_cast<std::size_t>(shape[i]);
  return s;
}

inline int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("axis out of range");
  return axis;
}

}  // namespace detail

/// x[..., begin:end, ...] along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int begin, int end) {
  axis = detail::normalize_axis(axis, x.rank());
  if (begin < 0 || end > x.dim(axis) || begin >= end) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for " + shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(axis)] = end - begin;
  const auto s = detail::split_at(x.shape(), axis);
  const std::size_t len = static_cast<std::size_t>(end - begin) * s.inner;
  const std::size_t off = static_cast<std::size_t>(begin) * s.inner;
  Tensor<T> out = detail::make_result<T>(shape, {&x});
  const T* px = x.data().data();
  T* po = out.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(px + o * s.extent * s.inner + off, len, po + o * len);
  }
  if (out.requires_grad()) {
    out.node()->backward = [s, len, off](TensorNode<T>& self) {
      auto& gi = self.inputs[0]->ensure_grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        T* dst = gi.data() + o * s.extent * s.inner + off;
        const T* src = self.grad.data() + o * len;
        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
      }
    };
  }
  return out;
}

/// Removes `axis` by taking position `index`.
template <typename T>
Tensor<T> select(const Tensor<T>& x, int axis, int index) {
  axis = detail::normalize_axis(axis, x.rank());
  Tensor<T> s = slice(x, axis, index, index + 1);
  Shape shape = x.shape();
  shape.erase(shape.begin() + axis);
  if (shape.empty()) shape = {1};
  // Drop the unit axis in place; `s` is a fresh tensor we own.
  s.node()->shape = shape;
  return s;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  axis = detail::normalize_axis(axis, parts[0].rank());
  Shape shape = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    if (a.size() != b.size()) throw ShapeError("concat rank mismatch");
    a[static_cast<std::size_t>(axis)] = b[static_cast<std::size_t>(axis)] = 0;
    if (a != b) throw ShapeError("concat shape mismatch: " + shape_str(p.shape()));
    total += p.dim(axis);
  }
  shape[static_cast<std::size_t>(axis)] = total;
  const auto s = detail::split_at(shape, axis);
  Tensor<T> out = detail::make_result<T>(shape, parts);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = static_cast<std::size_t>(p.dim(axis)) * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(p.data().data() + o * len, len, out.data().data() + o * s.extent * s.inner + off);
    }
    off += len;
  }
  if (out.requires_grad()) {
    out.node()->backward = [s, offsets](TensorNode<T>& self) {
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        auto& in = *self.inputs[k];
        if (!in.requires_grad) continue;
        auto& gi = in.ensure_grad();
        const std::size_t len = gi.size() / s.outer;
        for (std::size_t o = 0; o < s.outer; ++o) {
          const T* src = self.grad.data() + o * s.extent * s.inner + offsets[k];
          for (std::size_t i = 0; i < len; ++i) gi[o * len + i] += src[i];
        }
      }
    };
  }
  return out;
}

/// Stacks equally shaped tensors along a new axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("stack of zero tensors");
  const int rank = parts[0].rank() + 1;
  if (axis < 0) axis += rank;
  std::vector<Tensor<T>> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin() + axis, 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, axis);
}

// ---------------------------------------------------------------------------
// Matrix products

/// (M,K) x (K,N) -> (M,N)
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t M = static_cast<std::size_t>(a.dim(0));
  const std::size_t K = static_cast<std::size_t>(a.dim(1));
  const std::size_t N = static_cast<std::size_t>(b.dim(1));
  Tensor<T> out = detail::make_result<T>(Shape{a.dim(0), b.dim(1)}, {&a, &b});
  gemm::nn(M, N, K, a.data().data(), b.data().data(), out.data().data());
  if (out.requires_grad()) {
    out.node()->backward = [M, N, K](TensorNode<T>& self) {
      auto& na = *self.inputs[0];
      auto& nb = *self.inputs[1];
      if (na.requires_grad) gemm::nt(M, K, N, self.grad.data(), nb.data.data(), na.ensure_grad().data());
      if (nb.requires_grad) gemm::tn(K, N, M, na.data.data(), self.grad.data(), nb.ensure_grad().data());
    };
  }
  return out;
}

/// y = x W^T + b over the last axis; x (..., in), W (out, in), b (out) optional.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias = nullptr) {
  if (weight.rank() != 2 || x.dim(-1) != weight.dim(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  const std::size_t in = static_cast<std::size_t>(weight.dim(1));
  const std::size_t outf = static_cast<std::size_t>(weight.dim(0));
  const std::size_t rows = x.numel() / in;
  if (bias && (bias->numel() != outf)) throw ShapeError("linear: bias size mismatch");
  Shape shape = x.shape();
  shape.back() = static_cast<int>(outf);
  Tensor<T> out = bias ? detail::make_result<T>(shape, {&x, &weight, bias})
                       : detail::make_result<T>(shape, {&x, &weight});
  T* po = out.data().data();
  if (bias) {
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(bias->data().data(), outf, po + r * outf);
  }
  gemm::nt(rows, outf, in, x.data().data(), weight.data().data(), po);
  if (out.requires_grad()) {
    const bool has_bias = bias != nullptr;
    out.node()->backward = [rows, in, outf, has_bias](TensorNode<T>& self) {
      auto& nx = *self.inputs[0];
      auto& nw = *self.inputs[1];
      const T* g = self.grad.data();
      if (nx.requires_grad) gemm::nn(rows, in, outf, g, nw.data.data(), nx.ensure_grad().data());
      if (nw.requires_grad) gemm::tn(outf, in, rows, g, nx.data.data(), nw.ensure_grad().data());
      if (has_bias && self.inputs[2]->requires_grad) {
        auto& gb = self.inputs[2]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < outf; ++o) gb[o] += g[r * outf + o];
      }
    };
  }
  return out;
}

}  // namespace mambapupil
