#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "colt/numerics/ops.hpp"

namespace colt {

// One independent causal block inside packed q/k/v rows. Local query i sees
// local keys j <= i + (kv_len - q_len), so a block whose keys extend past
// its queries behaves like incremental decoding over a cache.
// Queries [q_begin, q_begin+q_len) attend causally within the key range
// [kv_begin, kv_begin+kv_len) (their last kv_len - q_len keys lead), plus an
// optional prefix range seen in full by every query.
struct AttnSegment {
  std::size_t q_begin = 0;
  std::size_t q_len = 0;
  std::size_t kv_begin = 0;
  std::size_t kv_len = 0;
  std::size_t prefix_begin = 0;
  std::size_t prefix_len = 0;
};

// Self-attention segments for sequences packed back to back.
inline std::vector<AttnSegment> packed_segments(const std::vector<std::size_t>& lengths) {
  std::vector<AttnSegment> segs;
  std::size_t off = 0;
  for (auto len : lengths) {
    segs.push_back({off, len, off, len});
    off += len;
  }
  return segs;
}

namespace detail {

// Prefix rows then the causal key rows of one head, as a dense block.
template <class T, class M>
RowMat<T> kv_rows(const M& m, const AttnSegment& s, std::size_t col, std::size_t hd) {
  using Eigen::Index;
  RowMat<T> out(Index(s.prefix_len + s.kv_len), Index(hd));
  if (s.prefix_len) out.topRows(Index(s.prefix_len)) = m.block(Index(s.prefix_begin), Index(col), Index(s.prefix_len), Index(hd));
  out.bottomRows(Index(s.kv_len)) = m.block(Index(s.kv_begin), Index(col), Index(s.kv_len), Index(hd));
  return out;
}

template <class T>
void scatter_kv(std::span<T> g, std::size_t nk, std::size_t d, const AttnSegment& s, std::size_t col, std::size_t hd,
                const RowMat<T>& part) {
  using Eigen::Index;
  auto gm = mat<T>(g, nk, d);
  if (s.prefix_len)
    gm.block(Index(s.prefix_begin), Index(col), Index(s.prefix_len), Index(hd)) += part.topRows(Index(s.prefix_len));
  gm.block(Index(s.kv_begin), Index(col), Index(s.kv_len), Index(hd)) += part.bottomRows(Index(s.kv_len));
}

}  // namespace detail

// Multi-head scaled dot-product attention with causal masking per segment.
// q[Nq, d], k/v[Nk, d]; heads split the columns evenly.
template <class T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t n_heads,
                           const std::vector<AttnSegment>& segments) {
  detail::require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "causal_attention", "expects rank-2 q/k/v");
  const std::size_t d = q.dim(1);
  detail::require(k.dim(1) == d && v.dim(1) == d && k.dim(0) == v.dim(0), "causal_attention",
                  "q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " + shape_str(v.shape()) +
                      " do not conform");
  detail::require(n_heads > 0 && d % n_heads == 0, "causal_attention",
                  "width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) + " heads");
  const std::size_t nq = q.dim(0), nk = k.dim(0), hd = d / n_heads;
  for (const auto& s : segments) {
    if (s.q_begin + s.q_len > nq) throw IndexError("causal_attention", s.q_begin + s.q_len, nq + 1);
    if (s.kv_begin + s.kv_len > nk) throw IndexError("causal_attention", s.kv_begin + s.kv_len, nk + 1);
    if (s.prefix_begin + s.prefix_len > nk) throw IndexError("causal_attention", s.prefix_begin + s.prefix_len, nk + 1);
    detail::require(s.kv_len >= s.q_len, "causal_attention", "segment has fewer keys than queries");
  }
  const T scale_f = T(1) / std::sqrt(static_cast<T>(hd));

  using Mat = detail::RowMat<T>;
  using Eigen::Index;
  auto qm = detail::cmat(q.node()->value, nq, d);
  auto km = detail::cmat(k.node()->value, nk, d);
  auto vm = detail::cmat(v.node()->value, nk, d);
  std::vector<T> out(nq * d, T(0));
  auto om = detail::mat<T>(out, nq, d);

  // probs[segment * n_heads + head] kept for the backward pass
  auto probs = std::make_shared<std::vector<Mat>>(segments.size() * n_heads);
  for (std::size_t si = 0; si < segments.size(); ++si) {
    const auto& s = segments[si];
    if (s.q_len == 0) continue;
    const std::size_t shift = s.prefix_len + s.kv_len - s.q_len, nkv = s.prefix_len + s.kv_len;
    for (std::size_t h = 0; h < n_heads; ++h) {
      auto qb = qm.block(Index(s.q_begin), Index(h * hd), Index(s.q_len), Index(hd));
      const Mat kb = detail::kv_rows<T>(km, s, h * hd, hd);
      const Mat vb = detail::kv_rows<T>(vm, s, h * hd, hd);
      Mat p = (qb * kb.transpose()) * scale_f;
      for (std::size_t i = 0; i < s.q_len; ++i) {
        const std::size_t last = i + shift;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= last; ++j) mx = std::max(mx, p(Index(i), Index(j)));
        T z = T(0);
        for (std::size_t j = 0; j < nkv; ++j) {
          T e = j <= last ? std::exp(p(Index(i), Index(j)) - mx) : T(0);
          p(Index(i), Index(j)) = e;
          z += e;
        }
        p.row(Index(i)) /= z;
      }
      om.block(Index(s.q_begin), Index(h * hd), Index(s.q_len), Index(hd)).noalias() = p * vb;
      (*probs)[si * n_heads + h] = std::move(p);
    }
  }

  return detail::make_result<T>(
      "causal_attention", {nq, d}, std::move(out), {&q, &k, &v},
      [segments, probs, n_heads, hd, nq, nk, d, scale_f](Node<T>& self) {
        auto& pq = *self.parents[0];
        auto& pk = *self.parents[1];
        auto& pv = *self.parents[2];
        auto g = detail::cmat(self.grad, nq, d);
        auto qm = detail::cmat(pq.value, nq, d);
        auto km = detail::cmat(pk.value, nk, d);
        auto vm = detail::cmat(pv.value, nk, d);
        std::span<T> gq = pq.requires_grad ? pq.grad_buffer() : std::span<T>{};
        std::span<T> gk = pk.requires_grad ? pk.grad_buffer() : std::span<T>{};
        std::span<T> gv = pv.requires_grad ? pv.grad_buffer() : std::span<T>{};
        for (std::size_t si = 0; si < segments.size(); ++si) {
          const auto& s = segments[si];
          if (s.q_len == 0) continue;
          for (std::size_t h = 0; h < n_heads; ++h) {
            const Mat& p = (*probs)[si * n_heads + h];
            auto gb = g.block(Index(s.q_begin), Index(h * hd), Index(s.q_len), Index(hd));
            auto qb = qm.block(Index(s.q_begin), Index(h * hd), Index(s.q_len), Index(hd));
            const Mat kb = detail::kv_rows<T>(km, s, h * hd, hd);
            const Mat vb = detail::kv_rows<T>(vm, s, h * hd, hd);
            if (!gv.empty()) detail::scatter_kv<T>(gv, nk, d, s, h * hd, hd, p.transpose() * gb);
            if (gq.empty() && gk.empty()) continue;
            Mat dp = gb * vb.transpose();
            Mat ds(p.rows(), p.cols());
            for (Index i = 0; i < p.rows(); ++i) {
              const T dot = p.row(i).dot(dp.row(i));
              ds.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix() * scale_f;
            }
            if (!gq.empty())
              detail::mat<T>(gq, nq, d)
                  .block(Index(s.q_begin), Index(h * hd), Index(s.q_len), Index(hd))
                  .noalias() += ds * kb;
            if (!gk.empty()) detail::scatter_kv<T>(gk, nk, d, s, h * hd, hd, ds.transpose() * qb);
          }
        }
      });
}

// Rotary position encoding applied per head to consecutive column pairs.
template <class T>
Tensor<T> rotary(const Tensor<T>& x, std::span<const std::size_t> positions, std::size_t n_heads,
                 double base = 10000.0) {
  detail::require(x.rank() == 2 && x.dim(0) == positions.size(), "rotary",
                  "expects one position per row, got " + shape_str(x.shape()) + " and " +
                      std::to_string(positions.size()) + " positions");
  const std::size_t n = x.dim(0), d = x.dim(1);
  detail::require(n_heads > 0 && d % n_heads == 0 && (d / n_heads) % 2 == 0, "rotary",
                  "head width must be even");
  const std::size_t hd = d / n_heads;
  auto cs = std::make_shared<std::vector<T>>(n * hd);  // interleaved cos/sin per pair
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < hd / 2; ++i) {
      const double theta = static_cast<double>(positions[r]) * std::pow(base, -2.0 * double(i) / double(hd));
      (*cs)[r * hd + 2 * i] = static_cast<T>(std::cos(theta));
      (*cs)[r * hd + 2 * i + 1] = static_cast<T>(std::sin(theta));
    }
  std::vector<T> out(n * d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t h = 0; h < n_heads; ++h)
      for (std::size_t i = 0; i < hd / 2; ++i) {
        const std::size_t c = r * d + h * hd + 2 * i;
        const T co = (*cs)[r * hd + 2 * i], si = (*cs)[r * hd + 2 * i + 1];
        const T a = x[c], b = x[c + 1];
        out[c] = a * co - b * si;
        out[c + 1] = a * si + b * co;
      }
  return detail::make_result<T>("rotary", {n, d}, std::move(out), {&x}, [cs, n, d, n_heads, hd](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t h = 0; h < n_heads; ++h)
        for (std::size_t i = 0; i < hd / 2; ++i) {
          const std::size_t c = r * d + h * hd + 2 * i;
          const T co = (*cs)[r * hd + 2 * i], si = (*cs)[r * hd + 2 * i + 1];
          const T ga = self.grad[c], gb = self.grad[c + 1];
          g[c] += ga * co + gb * si;
          g[c + 1] += -ga * si + gb * co;
        }
  });
}

}  // namespace colt
