#pragma once

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "mvsurf/autograd.hpp"
#include "mvsurf/tensor.hpp"

namespace mvsurf {

// Debug-mode finiteness checks, off by default.
bool debug_checks_enabled();
void set_debug_checks(bool on);

namespace detail {

template <class R>
inline void check_finite(const char* op, const Tensor<R>& t) {
  if (!debug_checks_enabled()) return;
  const R* p = t.data();
  for (std::int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(static_cast<double>(p[i])))
      throw std::runtime_error(std::string(op) + ": non-finite input at flat index " +
                               std::to_string(i));
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = ra > rb ? ra : rb;
  Shape out(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const std::int64_t ea = i < ra ? a[static_cast<std::size_t>(ra - 1 - i)] : 1;
    const std::int64_t eb = i < rb ? b[static_cast<std::size_t>(rb - 1 - i)] : 1;
    if (ea != eb && ea != 1 && eb != 1)
      throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                  shape_str(b) + " are not broadcast-compatible");
    out[static_cast<std::size_t>(r - 1 - i)] = ea > eb ? ea : eb;
  }
  return out;
}

// Row-major strides padded to `rank`, with zeros on broadcast dimensions.
inline std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  const int r = static_cast<int>(out.size()), rs = static_cast<int>(s.size());
  std::vector<std::int64_t> st(static_cast<std::size_t>(r), 0);
  std::int64_t acc = 1;
  for (int i = rs - 1; i >= 0; --i) {
    const int oi = r - rs + i;
    st[static_cast<std::size_t>(oi)] = (s[static_cast<std::size_t>(i)] == 1) ? 0 : acc;
    acc *= s[static_cast<std::size_t>(i)];
  }
  return st;
}

// Visits every element of `out_shape` in row-major order, tracking flat
// offsets into two broadcast inputs.
template <class F>
inline void broadcast_loop(const Shape& out_shape, const std::vector<std::int64_t>& sa,
                           const std::vector<std::int64_t>& sb, F&& f) {
  const int r = static_cast<int>(out_shape.size());
  const std::int64_t n = shape_numel(out_shape);
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    f(i, oa, ob);
    for (int d = r - 1; d >= 0; --d) {
      idx[static_cast<std::size_t>(d)]++;
      oa += sa[static_cast<std::size_t>(d)];
      ob += sb[static_cast<std::size_t>(d)];
      if (idx[static_cast<std::size_t>(d)] < out_shape[static_cast<std::size_t>(d)]) break;
      oa -= sa[static_cast<std::size_t>(d)] * out_shape[static_cast<std::size_t>(d)];
      ob -= sb[static_cast<std::size_t>(d)] * out_shape[static_cast<std::size_t>(d)];
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
}

// Sum g over broadcast dimensions so the result has `target` shape.
template <class R>
inline Tensor<R> reduce_to_shape(const Tensor<R>& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor<R> out = Tensor<R>::zeros(target);
  const auto st = broadcast_strides(target, g.shape());
  const std::vector<std::int64_t> sg = row_major_strides(g.shape());
  broadcast_loop(g.shape(), st, {sg.begin(), sg.end()},
                 [&](std::int64_t, std::int64_t ot, std::int64_t og) { out[ot] += g[og]; });
  return out;
}

// The closure must be built before this call so its by-value tensor captures
// carry no node yet (otherwise the node would own itself through the capture).
template <class R, class F>
inline void attach_node(Tensor<R>& out, F&& backprop) {
  auto n = std::make_shared<Node<R>>(out.shape());
  n->backprop = std::forward<F>(backprop);
  out.set_node(n);
  Graph<R>::active()->record(out.node());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// broadcasting binary arithmetic

template <class R, class FwdF, class BwdF>
inline Tensor<R> binary_op(const Tensor<R>& a, const Tensor<R>& b, const char* name, FwdF fwd,
                           BwdF bwd) {
  detail::check_finite(name, a);
  detail::check_finite(name, b);
  const Shape os = detail::broadcast_shape(a.shape(), b.shape(), name);
  Tensor<R> out(os);
  const R* pa = a.data();
  const R* pb = b.data();
  R* po = out.data();
  if (a.shape() == b.shape()) {
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  } else {
    const auto sa = detail::broadcast_strides(a.shape(), os);
    const auto sb = detail::broadcast_strides(b.shape(), os);
    detail::broadcast_loop(os, sa, sb, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
      po[i] = fwd(pa[oa], pb[ob]);
    });
  }
  if (Graph<R>::recording() && (a.tracked() || b.tracked())) {
    auto na = a.node();
    auto nb = b.node();
    detail::attach_node(out, [na, nb, a, b, out, bwd](const Tensor<R>& g) {
      const Shape& os2 = g.shape();
      if (na) {
        Tensor<R> ga(os2);
        const auto sa2 = detail::broadcast_strides(a.shape(), os2);
        const auto sb2 = detail::broadcast_strides(b.shape(), os2);
        detail::broadcast_loop(os2, sa2, sb2, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
          ga[i] = bwd(g[i], a[oa], b[ob], out[i], /*wrt_a=*/true);
        });
        na->accumulate(detail::reduce_to_shape(ga, a.shape()));
      }
      if (nb) {
        Tensor<R> gb(os2);
        const auto sa2 = detail::broadcast_strides(a.shape(), os2);
        const auto sb2 = detail::broadcast_strides(b.shape(), os2);
        detail::broadcast_loop(os2, sa2, sb2, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
          gb[i] = bwd(g[i], a[oa], b[ob], out[i], /*wrt_a=*/false);
        });
        nb->accumulate(detail::reduce_to_shape(gb, b.shape()));
      }
    });
  }
  return out;
}

template <class R>
inline Tensor<R> add(const Tensor<R>& a, const Tensor<R>& b) {
  return binary_op(a, b, "add", [](R x, R y) { return x + y; },
                   [](R g, R, R, R, bool) { return g; });
}

template <class R>
inline Tensor<R> sub(const Tensor<R>& a, const Tensor<R>& b) {
  return binary_op(a, b, "sub", [](R x, R y) { return x - y; },
                   [](R g, R, R, R, bool wrt_a) { return wrt_a ? g : -g; });
}

template <class R>
inline Tensor<R> mul(const Tensor<R>& a, const Tensor<R>& b) {
  return binary_op(a, b, "mul", [](R x, R y) { return x * y; },
                   [](R g, R x, R y, R, bool wrt_a) { return wrt_a ? g * y : g * x; });
}

template <class R>
inline Tensor<R> div(const Tensor<R>& a, const Tensor<R>& b) {
  return binary_op(a, b, "div", [](R x, R y) { return x / y; },
                   [](R g, R x, R y, R, bool wrt_a) {
                     return wrt_a ? g / y : -g * x / (y * y);
                   });
}

// ---------------------------------------------------------------------------
// unary maps

template <class R, class FwdF, class BwdF>
inline Tensor<R> unary_op(const Tensor<R>& x, const char* name, FwdF fwd, BwdF bwd) {
  detail::check_finite(name, x);
  Tensor<R> out(x.shape());
  const R* px = x.data();
  R* po = out.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  if (Graph<R>::recording() && x.tracked()) {
    auto nx = x.node();
    detail::attach_node(out, [nx, x, out, bwd](const Tensor<R>& g) {
      Tensor<R>& buf = nx->grad_buffer();
      const std::int64_t m = g.numel();
      for (std::int64_t i = 0; i < m; ++i) buf[i] += bwd(g[i], x[i], out[i]);
    });
  }
  return out;
}

template <class R>
inline Tensor<R> neg(const Tensor<R>& x) {
  return unary_op(x, "neg", [](R v) { return -v; }, [](R g, R, R) { return -g; });
}

template <class R>
inline Tensor<R> relu(const Tensor<R>& x) {
  return unary_op(x, "relu", [](R v) { return v > R(0) ? v : R(0); },
                  [](R g, R v, R) { return v > R(0) ? g : R(0); });
}

template <class R>
inline Tensor<R> elu(const Tensor<R>& x) {
  return unary_op(x, "elu", [](R v) { return v > R(0) ? v : std::expm1(v); },
                  [](R g, R v, R y) { return v > R(0) ? g : g * (y + R(1)); });
}

template <class R>
inline Tensor<R> sigmoid(const Tensor<R>& x) {
  return unary_op(x, "sigmoid",
                  [](R v) {
                    if (v >= R(0)) return R(1) / (R(1) + std::exp(-v));
                    const R e = std::exp(v);
                    return e / (R(1) + e);
                  },
                  [](R g, R, R y) { return g * y * (R(1) - y); });
}

template <class R>
inline Tensor<R> tanh_t(const Tensor<R>& x) {
  return unary_op(x, "tanh", [](R v) { return std::tanh(v); },
                  [](R g, R, R y) { return g * (R(1) - y * y); });
}

template <class R>
inline Tensor<R> exp_t(const Tensor<R>& x) {
  return unary_op(x, "exp", [](R v) { return std::exp(v); },
                  [](R g, R, R y) { return g * y; });
}

template <class R>
inline Tensor<R> log_t(const Tensor<R>& x) {
  return unary_op(x, "log", [](R v) { return std::log(v); },
                  [](R g, R v, R) { return g / v; });
}

template <class R>
inline Tensor<R> sqrt_t(const Tensor<R>& x) {
  return unary_op(x, "sqrt", [](R v) { return std::sqrt(v); },
                  [](R g, R, R y) { return g / (R(2) * y); });
}

template <class R>
inline Tensor<R> abs_t(const Tensor<R>& x) {
  return unary_op(x, "abs", [](R v) { return std::abs(v); },
                  [](R g, R v, R) { return v > R(0) ? g : (v < R(0) ? -g : R(0)); });
}

template <class R>
inline Tensor<R> square(const Tensor<R>& x) {
  return unary_op(x, "square", [](R v) { return v * v; },
                  [](R g, R v, R) { return R(2) * g * v; });
}

template <class R>
inline Tensor<R> mul_scalar(const Tensor<R>& x, R c) {
  return unary_op(x, "scalar-mul", [c](R v) { return v * c; },
                  [c](R g, R, R) { return g * c; });
}

template <class R>
inline Tensor<R> add_scalar(const Tensor<R>& x, R c) {
  return unary_op(x, "scalar-add", [c](R v) { return v + c; }, [](R g, R, R) { return g; });
}

}  // namespace mvsurf
