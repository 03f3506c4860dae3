#pragma once

#include <algorithm>
#include <cmath>

#include "mvsurf/ops_elementwise.hpp"
#include "mvsurf/parallel.hpp"

namespace mvsurf {

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <class R>
inline void gemm_acc(const R* A, const R* B, R* C, std::int64_t m, std::int64_t k,
                     std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    R* crow = C + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const R av = A[i * k + p];
      const R* brow = B + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T   (rows of G dotted with rows of B)
template <class R>
inline void gemm_abt_acc(const R* G, const R* B, R* C, std::int64_t m, std::int64_t n,
                         std::int64_t k) {
  for (std::int64_t i = 0; i < m; ++i) {
    const R* grow = G + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const R* brow = B + p * n;
      R acc = 0;
      for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      C[i * k + p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
template <class R>
inline void gemm_atb_acc(const R* A, const R* G, R* C, std::int64_t m, std::int64_t k,
                         std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const R* grow = G + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const R av = A[i * k + p];
      R* crow = C + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

inline Shape matmul_out_shape(const Shape& a, const Shape& b, std::int64_t& batch,
                              std::int64_t& m, std::int64_t& k, std::int64_t& n, bool& a_batched,
                              bool& b_batched) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("matmul: both operands need rank >= 2, got " + shape_str(a) +
                                " and " + shape_str(b));
  m = a[a.size() - 2];
  k = a[a.size() - 1];
  if (b[b.size() - 2] != k)
    throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a) + " vs " +
                                shape_str(b));
  n = b[b.size() - 1];
  Shape lead;
  const Shape la(a.begin(), a.end() - 2), lb(b.begin(), b.end() - 2);
  if (!la.empty() && !lb.empty() && la != lb)
    throw std::invalid_argument("matmul: batch extents differ, " + shape_str(a) + " vs " +
                                shape_str(b));
  lead = la.empty() ? lb : la;
  batch = shape_numel(lead);
  a_batched = !la.empty();
  b_batched = !lb.empty();
  Shape out = lead;
  out.push_back(m);
  out.push_back(n);
  return out;
}

}  // namespace detail

// Matrix product. Rank-2 or batched with identical leading dims; a rank-2
// operand is shared across the other side's batch.
template <class R>
inline Tensor<R> matmul(const Tensor<R>& a, const Tensor<R>& b) {
  detail::check_finite("matmul", a);
  detail::check_finite("matmul", b);
  std::int64_t batch, m, k, n;
  bool ab, bb;
  const Shape os = detail::matmul_out_shape(a.shape(), b.shape(), batch, m, k, n, ab, bb);
  Tensor<R> out(os);
  const R* pa = a.data();
  const R* pb = b.data();
  R* po = out.data();
  parallel_for(batch, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t t = lo; t < hi; ++t)
      detail::gemm_acc(pa + (ab ? t * m * k : 0), pb + (bb ? t * k * n : 0), po + t * m * n, m, k,
                       n);
  }, std::max<std::int64_t>(1, 65536 / (m * k * n + 1)));
  if (Graph<R>::recording() && (a.tracked() || b.tracked())) {
    auto na = a.node();
    auto nb = b.node();
    detail::attach_node(out, [na, nb, a, b, batch, m, k, n, ab, bb](const Tensor<R>& g) {
      if (na) {
        Tensor<R>& buf = na->grad_buffer();
        for (std::int64_t t = 0; t < batch; ++t)
          detail::gemm_abt_acc(g.data() + t * m * n, b.data() + (bb ? t * k * n : 0),
                               buf.data() + (ab ? t * m * k : 0), m, n, k);
      }
      if (nb) {
        Tensor<R>& buf = nb->grad_buffer();
        for (std::int64_t t = 0; t < batch; ++t)
          detail::gemm_atb_acc(a.data() + (ab ? t * m * k : 0), g.data() + t * m * n,
                               buf.data() + (bb ? t * k * n : 0), m, k, n);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

namespace detail {

inline std::vector<int> normalize_axes(std::vector<int> axes, int rank, const char* op) {
  for (auto& a : axes) {
    if (a < 0) a += rank;
    if (a < 0 || a >= rank)
      throw std::invalid_argument(std::string(op) + ": axis out of range");
  }
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  return axes;
}

inline Shape reduced_shape(const Shape& s, const std::vector<int>& axes, bool keepdim) {
  Shape out;
  std::size_t ai = 0;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if (ai < axes.size() && axes[ai] == i) {
      ++ai;
      if (keepdim) out.push_back(1);
    } else {
      out.push_back(s[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

}  // namespace detail

// Sum over the given axes (all axes when empty). scale lets mean share the path.
template <class R>
inline Tensor<R> sum(const Tensor<R>& x, std::vector<int> axes = {}, bool keepdim = false,
                     R scale = R(1)) {
  detail::check_finite("sum", x);
  if (axes.empty()) {
    axes.resize(static_cast<std::size_t>(x.rank()));
    for (int i = 0; i < x.rank(); ++i) axes[static_cast<std::size_t>(i)] = i;
  }
  axes = detail::normalize_axes(std::move(axes), x.rank(), "sum");
  const Shape os = detail::reduced_shape(x.shape(), axes, keepdim);
  // strides of the output viewed through x's full shape (0 on reduced dims)
  Shape keep_shape = detail::reduced_shape(x.shape(), axes, true);
  Tensor<R> out = Tensor<R>::zeros(os);
  const auto so = detail::broadcast_strides(keep_shape, x.shape());
  const std::vector<std::int64_t> sx = row_major_strides(x.shape());
  detail::broadcast_loop(x.shape(), so, {sx.begin(), sx.end()},
                         [&](std::int64_t, std::int64_t oo, std::int64_t ox) { out[oo] += x[ox]; });
  if (scale != R(1))
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= scale;
  if (Graph<R>::recording() && x.tracked()) {
    auto nx = x.node();
    const Shape xs = x.shape();
    detail::attach_node(out, [nx, xs, keep_shape, scale](const Tensor<R>& g) {
      Tensor<R>& buf = nx->grad_buffer();
      const auto so2 = detail::broadcast_strides(keep_shape, xs);
      const std::vector<std::int64_t> sx2 = row_major_strides(xs);
      detail::broadcast_loop(xs, so2, {sx2.begin(), sx2.end()},
                             [&](std::int64_t, std::int64_t oo, std::int64_t ox) {
                               buf[ox] += g[oo] * scale;
                             });
    });
  }
  return out;
}

template <class R>
inline Tensor<R> mean(const Tensor<R>& x, std::vector<int> axes = {}, bool keepdim = false) {
  std::int64_t count = 1;
  if (axes.empty()) {
    count = x.numel();
  } else {
    auto norm = detail::normalize_axes(axes, x.rank(), "mean");
    for (int a : norm) count *= x.dim(a);
  }
  return sum(x, std::move(axes), keepdim, R(1) / static_cast<R>(count));
}

// Max along one axis; returns values and flat argmax offsets along that axis.
template <class R>
struct MaxResult {
  Tensor<R> values;
  std::shared_ptr<std::vector<std::int64_t>> indices;
};

template <class R>
inline MaxResult<R> max_axis(const Tensor<R>& x, int axis) {
  detail::check_finite("max", x);
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::invalid_argument("max: axis out of range");
  std::int64_t outer = 1, inner = 1;
  const std::int64_t e = x.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  Shape os = detail::reduced_shape(x.shape(), {axis}, false);
  Tensor<R> vals(os.empty() ? Shape{} : os);
  auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(outer * inner));
  const R* px = x.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      R best = px[o * e * inner + in];
      std::int64_t bi = 0;
      for (std::int64_t j = 1; j < e; ++j) {
        const R v = px[(o * e + j) * inner + in];
        if (v > best) {
          best = v;
          bi = j;
        }
      }
      vals[o * inner + in] = best;
      (*idx)[static_cast<std::size_t>(o * inner + in)] = bi;
    }
  if (Graph<R>::recording() && x.tracked()) {
    auto nx = x.node();
    detail::attach_node(vals, [nx, idx, outer, inner, e](const Tensor<R>& g) {
      Tensor<R>& buf = nx->grad_buffer();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t j = (*idx)[static_cast<std::size_t>(o * inner + in)];
          buf[(o * e + j) * inner + in] += g[o * inner + in];
        }
    });
  }
  return {vals, idx};
}

// ---------------------------------------------------------------------------
// softmax / layer norm / cosine similarity

template <class R>
inline Tensor<R> softmax(const Tensor<R>& x, int axis) {
  detail::check_finite("softmax", x);
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::invalid_argument("softmax: axis out of range");
  std::int64_t outer = 1, inner = 1;
  const std::int64_t e = x.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  Tensor<R> out(x.shape());
  const R* px = x.data();
  R* po = out.data();
  parallel_for(outer, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t o = lo; o < hi; ++o)
      for (std::int64_t in = 0; in < inner; ++in) {
        const std::int64_t base = o * e * inner + in;
        R mx = px[base];
        for (std::int64_t j = 1; j < e; ++j) mx = std::max(mx, px[base + j * inner]);
        R z = 0;
        for (std::int64_t j = 0; j < e; ++j) {
          const R v = std::exp(px[base + j * inner] - mx);
          po[base + j * inner] = v;
          z += v;
        }
        const R rz = R(1) / z;
        for (std::int64_t j = 0; j < e; ++j) po[base + j * inner] *= rz;
      }
  }, 256);
  if (Graph<R>::recording() && x.tracked()) {
    auto nx = x.node();
    detail::attach_node(out, [nx, out, outer, inner, e](const Tensor<R>& g) {
      Tensor<R>& buf = nx->grad_buffer();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * e * inner + in;
          R dot = 0;
          for (std::int64_t j = 0; j < e; ++j) dot += g[base + j * inner] * out[base + j * inner];
          for (std::int64_t j = 0; j < e; ++j)
            buf[base + j * inner] += out[base + j * inner] * (g[base + j * inner] - dot);
        }
    });
  }
  return out;
}

// Normalizes over the last axis; gamma/beta have that axis's extent.
template <class R>
inline Tensor<R> layer_norm(const Tensor<R>& x, const Tensor<R>& gamma, const Tensor<R>& beta,
                            R eps = R(1e-5)) {
  detail::check_finite("layer-normalization", x);
  const std::int64_t n = x.dim(-1);
  if (gamma.numel() != n || beta.numel() != n)
    throw std::invalid_argument("layer-normalization: gamma/beta extent mismatch with " +
                                shape_str(x.shape()));
  const std::int64_t rows = x.numel() / n;
  Tensor<R> out(x.shape());
  Tensor<R> rstd({rows}), mu({rows});
  const R* px = x.data();
  R* po = out.data();
  for (std::int64_t row = 0; row < rows; ++row) {
    const R* xr = px + row * n;
    R m = 0;
    for (std::int64_t j = 0; j < n; ++j) m += xr[j];
    m /= static_cast<R>(n);
    R v = 0;
    for (std::int64_t j = 0; j < n; ++j) v += (xr[j] - m) * (xr[j] - m);
    v /= static_cast<R>(n);
    const R rs = R(1) / std::sqrt(v + eps);
    mu[row] = m;
    rstd[row] = rs;
    R* orow = po + row * n;
    for (std::int64_t j = 0; j < n; ++j) orow[j] = (xr[j] - m) * rs * gamma[j] + beta[j];
  }
  if (Graph<R>::recording() && (x.tracked() || gamma.tracked() || beta.tracked())) {
    auto nx = x.node();
    auto ng = gamma.node();
    auto nb = beta.node();
    detail::attach_node(out, [nx, ng, nb, x, gamma, mu, rstd, rows, n](const Tensor<R>& g) {
      for (std::int64_t row = 0; row < rows; ++row) {
        const R* xr = x.data() + row * n;
        const R* gr = g.data() + row * n;
        const R m = mu[row], rs = rstd[row];
        if (nx) {
          Tensor<R>& buf = nx->grad_buffer();
          R sum_dxhat = 0, sum_dxhat_xhat = 0;
          for (std::int64_t j = 0; j < n; ++j) {
            const R xhat = (xr[j] - m) * rs;
            const R dxhat = gr[j] * gamma[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
          R* brow = buf.data() + row * n;
          for (std::int64_t j = 0; j < n; ++j) {
            const R xhat = (xr[j] - m) * rs;
            const R dxhat = gr[j] * gamma[j];
            brow[j] += rs * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / static_cast<R>(n));
          }
        }
        if (ng) {
          Tensor<R>& buf = ng->grad_buffer();
          for (std::int64_t j = 0; j < n; ++j) buf[j] += gr[j] * (xr[j] - m) * rs;
        }
        if (nb) {
          Tensor<R>& buf = nb->grad_buffer();
          for (std::int64_t j = 0; j < n; ++j) buf[j] += gr[j];
        }
      }
    });
  }
  return out;
}

// Cosine similarity along `axis`; zero-norm vectors yield similarity 0 with
// zero gradient.
template <class R>
inline Tensor<R> cosine_similarity(const Tensor<R>& a, const Tensor<R>& b, int axis,
                                   R eps = R(1e-12)) {
  detail::check_finite("cosine-similarity", a);
  detail::check_finite("cosine-similarity", b);
  if (a.shape() != b.shape())
    throw std::invalid_argument("cosine-similarity: shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()) + " differ");
  const int r = a.rank();
  if (axis < 0) axis += r;
  std::int64_t outer = 1, inner = 1;
  const std::int64_t e = a.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= a.dim(i);
  const Shape os = detail::reduced_shape(a.shape(), {axis}, false);
  Tensor<R> out(os.empty() ? Shape{} : os);
  Tensor<R> nas(out.shape()), nbs(out.shape()), dots(out.shape());
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      R dot = 0, na2 = 0, nb2 = 0;
      const std::int64_t base = o * e * inner + in;
      for (std::int64_t j = 0; j < e; ++j) {
        const R av = a[base + j * inner], bv = b[base + j * inner];
        dot += av * bv;
        na2 += av * av;
        nb2 += bv * bv;
      }
      const R na = std::sqrt(na2), nb = std::sqrt(nb2);
      const std::int64_t oo = o * inner + in;
      nas[oo] = na;
      nbs[oo] = nb;
      dots[oo] = dot;
      out[oo] = (na < eps || nb < eps) ? R(0) : dot / (na * nb);
    }
  if (Graph<R>::recording() && (a.tracked() || b.tracked())) {
    auto na_node = a.node();
    auto nb_node = b.node();
    detail::attach_node(
        out, [na_node, nb_node, a, b, nas, nbs, dots, outer, inner, e, eps](const Tensor<R>& g) {
          for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t in = 0; in < inner; ++in) {
              const std::int64_t oo = o * inner + in;
              const R na = nas[oo], nb = nbs[oo];
              if (na < eps || nb < eps) continue;
              const R cosv = dots[oo] / (na * nb);
              const std::int64_t base = o * e * inner + in;
              const R gv = g[oo];
              for (std::int64_t j = 0; j < e; ++j) {
                const R av = a[base + j * inner], bv = b[base + j * inner];
                if (na_node)
                  na_node->grad_buffer()[base + j * inner] +=
                      gv * (bv / (na * nb) - cosv * av / (na * na));
                if (nb_node)
                  nb_node->grad_buffer()[base + j * inner] +=
                      gv * (av / (na * nb) - cosv * bv / (nb * nb));
              }
            }
        });
  }
  return out;
}

}  // namespace mvsurf
