#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "colt/numerics/tensor.hpp"

namespace colt {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using CVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <class T>
CMatMap<T> cmat(const std::vector<T>& v, std::size_t r, std::size_t c) {
  return CMatMap<T>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
template <class T>
MatMap<T> mat(std::span<T> v, std::size_t r, std::size_t c) {
  return MatMap<T>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <class T>
bool needs_grad(std::initializer_list<const Tensor<T>*> ts) {
  if (!colt::grad_enabled()) return false;
  for (auto* t : ts)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

// Builds an op result; records parents and the backward closure only when a
// parent requires grad and recording is enabled.
template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::initializer_list<const Tensor<T>*> parents,
                      std::function<void(Node<T>&)> bw) {
  auto out = Tensor<T>::from(std::move(shape), std::move(values));
  out.node()->op = op;
  if (needs_grad<T>(parents)) {
    auto* n = out.node();
    n->requires_grad = true;
    for (auto* p : parents)
      if (p->defined()) n->parents.push_back(p->node_ptr());
    n->backward = std::move(bw);
  }
  return out;
}

template <class T>
std::span<T> parent_grad(Node<T>& n, std::size_t i) {
  auto& p = *n.parents[i];
  if (!p.requires_grad) return {};
  return p.grad_buffer();
}

inline void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ShapeError(op, what);
}

// `b` matches `a` exactly, or matches `a` with its leading extent dropped.
template <class T>
bool leading_broadcast(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return false;
  if (a.rank() == b.rank() + 1 && std::equal(b.shape().begin(), b.shape().end(), a.shape().begin() + 1))
    return true;
  throw ShapeError(op, "operands " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                           " do not conform");
}

template <class T>
std::size_t last_extent(const Tensor<T>& x) {
  return x.rank() == 0 ? 1 : x.shape().back();
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2, "matmul",
                  "expects rank-2 operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::require(b.dim(0) == k, "matmul",
                  "inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(m * n);
  detail::mat<T>(out, m, n).noalias() = detail::cmat(a.node()->value, m, k) * detail::cmat(b.node()->value, k, n);
  return detail::make_result<T>("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](Node<T>& self) {
    auto g = detail::cmat(self.grad, m, n);
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad)
      detail::mat<T>(pa.grad_buffer(), m, k).noalias() += g * detail::cmat(pb.value, k, n).transpose();
    if (pb.requires_grad)
      detail::mat<T>(pb.grad_buffer(), k, n).noalias() += detail::cmat(pa.value, m, k).transpose() * g;
  });
}

// x[N, in] * w[in, out] + bias[out]; bias may be undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
  detail::require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(0), "linear",
                  "input " + shape_str(x.shape()) + " does not conform to weight " + shape_str(w.shape()));
  const std::size_t n = x.dim(0), in = w.dim(0), outd = w.dim(1);
  const bool has_bias = bias.defined();
  if (has_bias)
    detail::require(bias.rank() == 1 && bias.dim(0) == outd, "linear",
                    "bias " + shape_str(bias.shape()) + " does not match output width " + std::to_string(outd));
  std::vector<T> out(n * outd);
  auto o = detail::mat<T>(out, n, outd);
  o.noalias() = detail::cmat(x.node()->value, n, in) * detail::cmat(w.node()->value, in, outd);
  if (has_bias) o.rowwise() += detail::cmat(bias.node()->value, 1, outd).row(0);
  Tensor<T> none;
  return detail::make_result<T>(
      "linear", {n, outd}, std::move(out), {&x, &w, has_bias ? &bias : &none},
      [n, in, outd, has_bias](Node<T>& self) {
        auto g = detail::cmat(self.grad, n, outd);
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        if (px.requires_grad)
          detail::mat<T>(px.grad_buffer(), n, in).noalias() += g * detail::cmat(pw.value, in, outd).transpose();
        if (pw.requires_grad)
          detail::mat<T>(pw.grad_buffer(), in, outd).noalias() += detail::cmat(px.value, n, in).transpose() * g;
        if (has_bias && self.parents[2]->requires_grad)
          detail::mat<T>(self.parents[2]->grad_buffer(), 1, outd) += g.colwise().sum();
      });
}

namespace detail {

// Elementwise binary op with optional leading-batch broadcast of `b`.
template <class T, class F, class DA, class DB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  const bool bc = leading_broadcast(a, b, op);
  const std::size_t n = a.numel(), m = b.numel();
  std::vector<T> out(n);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[bc ? i % m : i]);
  return make_result<T>(op, a.shape(), std::move(out), {&a, &b}, [n, m, bc, da, db](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto ga = pa.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        ga[i] += self.grad[i] * da(pa.value[i], pb.value[bc ? i % m : i], self.value[i]);
    }
    if (pb.requires_grad) {
      auto gb = pb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        gb[bc ? i % m : i] += self.grad[i] * db(pa.value[i], pb.value[bc ? i % m : i], self.value[i]);
    }
  });
}

template <class T, class F, class D>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, D d) {
  const std::size_t n = a.numel();
  std::vector<T> out(n);
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i]);
  return make_result<T>(op, a.shape(), std::move(out), {&a}, [n, d](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto ga = pa.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] * d(pa.value[i], self.value[i]);
  });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

// Elementwise minimum; ties route the gradient to `a`.
template <class T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "minimum", a, b, [](T x, T y) { return y < x ? y : x; },
      [](T x, T y, T) { return y < x ? T(0) : T(1); }, [](T x, T y, T) { return y < x ? T(1) : T(0); });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return detail::unary<T>("scale", a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return detail::unary<T>("add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

// Gradient passes where lo < x < hi and is zero on the clamped plateaus.
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return detail::unary<T>(
      "clamp", a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.data()) s += v;
  const std::size_t n = a.numel();
  return detail::make_result<T>("sum", {}, {s}, {&a}, [n](Node<T>& self) {
    auto ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  detail::require(a.numel() > 0, "mean", "empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// [N, d] -> [d], averaging over rows.
template <class T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  detail::require(x.rank() == 2 && x.dim(0) > 0, "mean_rows", "expects non-empty rank-2, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<T> out(d, T(0));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c] += x[r * d + c];
  for (auto& v : out) v /= static_cast<T>(n);
  return detail::make_result<T>("mean_rows", {d}, std::move(out), {&x}, [n, d](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    const T inv = T(1) / static_cast<T>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) g[r * d + c] += self.grad[c] * inv;
  });
}

// Explicit broadcast of x[d] to [n, d].
template <class T>
Tensor<T> expand_rows(const Tensor<T>& x, std::size_t n) {
  detail::require(x.rank() == 1, "expand_rows", "expects rank-1, got " + shape_str(x.shape()));
  const std::size_t d = x.dim(0);
  std::vector<T> out(n * d);
  for (std::size_t r = 0; r < n; ++r) std::copy(x.data().begin(), x.data().end(), out.begin() + r * d);
  return detail::make_result<T>("expand_rows", {n, d}, std::move(out), {&x}, [n, d](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[r * d + c];
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(shape_numel(shape) == x.numel(), "reshape",
                  "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  const std::size_t n = x.numel();
  return detail::make_result<T>("reshape", std::move(shape), x.to_vector(), {&x}, [n](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
  });
}

// Softmax over the last extent.
template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  const std::size_t d = detail::last_extent(x);
  detail::require(d > 0, "softmax", "empty last extent");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.ptr() + r * d;
    T* o = out.data() + r * d;
    const T mx = *std::max_element(in, in + d);
    T s = T(0);
    for (std::size_t c = 0; c < d; ++c) s += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < d; ++c) o[c] /= s;
  }
  return detail::make_result<T>("softmax", x.shape(), std::move(out), {&x}, [rows, d](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * d;
      const T* gy = self.grad.data() + r * d;
      T dot = T(0);
      for (std::size_t c = 0; c < d; ++c) dot += y[c] * gy[c];
      for (std::size_t c = 0; c < d; ++c) g[r * d + c] += y[c] * (gy[c] - dot);
    }
  });
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  const std::size_t d = detail::last_extent(x);
  detail::require(d > 0, "log_softmax", "empty last extent");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.ptr() + r * d;
    T* o = out.data() + r * d;
    const T mx = *std::max_element(in, in + d);
    T s = T(0);
    for (std::size_t c = 0; c < d; ++c) s += std::exp(in[c] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t c = 0; c < d; ++c) o[c] = in[c] - lse;
  }
  return detail::make_result<T>("log_softmax", x.shape(), std::move(out), {&x}, [rows, d](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * d;
      const T* gy = self.grad.data() + r * d;
      T gs = T(0);
      for (std::size_t c = 0; c < d; ++c) gs += gy[c];
      for (std::size_t c = 0; c < d; ++c) g[r * d + c] += gy[c] - std::exp(y[c]) * gs;
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

// Row-wise normalization of x[N, d] with affine gain/bias of width d.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
  detail::require(x.rank() == 2, "layer_norm", "expects rank-2 input, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  detail::require(gain.shape() == Shape{d} && bias.shape() == Shape{d}, "layer_norm",
                  "affine params must be [" + std::to_string(d) + "]");
  std::vector<T> out(n * d);
  auto xhat = std::make_shared<std::vector<T>>(n * d);
  auto rstd = std::make_shared<std::vector<T>>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* in = x.ptr() + r * d;
    T mu = T(0);
    for (std::size_t c = 0; c < d; ++c) mu += in[c];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (in[c] - mu) * rs;
      (*xhat)[r * d + c] = h;
      out[r * d + c] = h * gain[c] + bias[c];
    }
  }
  return detail::make_result<T>(
      "layer_norm", {n, d}, std::move(out), {&x, &gain, &bias}, [n, d, xhat, rstd](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& gv = pg.value;
        if (pg.requires_grad || pb.requires_grad) {
          auto gg = pg.requires_grad ? pg.grad_buffer() : std::span<T>{};
          auto gb = pb.requires_grad ? pb.grad_buffer() : std::span<T>{};
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) {
              const T gy = self.grad[r * d + c];
              if (!gg.empty()) gg[c] += gy * (*xhat)[r * d + c];
              if (!gb.empty()) gb[c] += gy;
            }
        }
        if (px.requires_grad) {
          auto gx = px.grad_buffer();
          for (std::size_t r = 0; r < n; ++r) {
            T s1 = T(0), s2 = T(0);
            for (std::size_t c = 0; c < d; ++c) {
              const T gh = self.grad[r * d + c] * gv[c];
              s1 += gh;
              s2 += gh * (*xhat)[r * d + c];
            }
            const T inv_d = T(1) / static_cast<T>(d);
            for (std::size_t c = 0; c < d; ++c) {
              const T gh = self.grad[r * d + c] * gv[c];
              gx[r * d + c] += (*rstd)[r] * (gh - inv_d * s1 - (*xhat)[r * d + c] * inv_d * s2);
            }
          }
        }
      });
}

// Rows of table[V, d] selected by ids.
template <class T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  detail::require(table.rank() == 2, "embedding", "table must be rank-2, got " + shape_str(table.shape()));
  const std::size_t v = table.dim(0), d = table.dim(1), n = ids.size();
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<T> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= v)
      throw IndexError("embedding", static_cast<std::size_t>(idx[i]), v);
    std::copy_n(table.ptr() + static_cast<std::size_t>(idx[i]) * d, d, out.begin() + i * d);
  }
  return detail::make_result<T>("embedding", {n, d}, std::move(out), {&table}, [idx, d](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) g[static_cast<std::size_t>(idx[i]) * d + c] += self.grad[i * d + c];
  });
}

// Row-select: x[N, ...] -> x[idx, ...].
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> idx) {
  detail::require(x.rank() >= 1, "gather_rows", "expects rank >= 1");
  const std::size_t n = x.dim(0), w = x.numel() / std::max<std::size_t>(n, 1);
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  std::vector<T> out(rows.size() * w);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) throw IndexError("gather_rows", rows[i], n);
    std::copy_n(x.ptr() + rows[i] * w, w, out.begin() + i * w);
  }
  Shape s = x.shape();
  s[0] = rows.size();
  return detail::make_result<T>("gather_rows", std::move(s), std::move(out), {&x}, [rows, w](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < w; ++c) g[rows[i] * w + c] += self.grad[i * w + c];
  });
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  if (x.rank() < 1 || begin + count > x.dim(0))
    throw IndexError("slice_rows", begin + count, x.rank() ? x.dim(0) + 1 : 0);
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), begin);
  return gather_rows(x, std::span<const std::size_t>(idx));
}

// Concatenation along the leading extent.
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_rows", "no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t total = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    detail::require(p.rank() == parts[0].rank() && t == tail, "concat_rows",
                    "trailing extents differ: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    total += p.dim(0);
    sizes.push_back(p.numel());
  }
  std::vector<T> out;
  out.reserve(shape_numel(tail) * total);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Shape s = parts[0].shape();
  s[0] = total;
  auto res = Tensor<T>::from(std::move(s), std::move(out));
  res.node()->op = "concat_rows";
  bool rg = false;
  if (grad_enabled())
    for (const auto& p : parts) rg = rg || p.requires_grad();
  if (rg) {
    auto* n = res.node();
    n->requires_grad = true;
    for (const auto& p : parts) n->parents.push_back(p.node_ptr());
    n->backward = [sizes](Node<T>& self) {
      std::size_t off = 0;
      for (std::size_t i = 0; i < sizes.size(); ++i) {
        auto& p = *self.parents[i];
        if (p.requires_grad) {
          auto g = p.grad_buffer();
          for (std::size_t j = 0; j < sizes[i]; ++j) g[j] += self.grad[off + j];
        }
        off += sizes[i];
      }
    };
  }
  return res;
}

// out[i] = x[i, idx[i]] for x[N, V].
template <class T>
Tensor<T> pick(const Tensor<T>& x, std::span<const int> idx) {
  detail::require(x.rank() == 2 && x.dim(0) == idx.size(), "pick",
                  "expects [N, V] with N = " + std::to_string(idx.size()) + ", got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), v = x.dim(1);
  std::vector<int> cols(idx.begin(), idx.end());
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= v)
      throw IndexError("pick", static_cast<std::size_t>(cols[i]), v);
    out[i] = x[i * v + static_cast<std::size_t>(cols[i])];
  }
  return detail::make_result<T>("pick", {n}, std::move(out), {&x}, [cols, v](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < cols.size(); ++i) g[i * v + static_cast<std::size_t>(cols[i])] += self.grad[i];
  });
}

}  // namespace colt
