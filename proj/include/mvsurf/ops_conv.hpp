#pragma once

#include <algorithm>

#include "mvsurf/ops_elementwise.hpp"
#include "mvsurf/parallel.hpp"

namespace mvsurf {

namespace detail {

// Output extent of a strided convolution axis.
inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride,
                                    std::int64_t pad, const char* op) {
  const std::int64_t out = (in + 2 * pad - k) / stride + 1;
  if (in + 2 * pad < k || out < 1)
    throw std::invalid_argument(std::string(op) + ": kernel " + std::to_string(k) +
                                " exceeds padded input " + std::to_string(in + 2 * pad));
  return out;
}

// Valid output range [lo, hi) so that o*stride - pad + koff lands in [0, in).
inline void conv_bounds(std::int64_t out, std::int64_t in, std::int64_t stride, std::int64_t pad,
                        std::int64_t koff, std::int64_t& lo, std::int64_t& hi) {
  const std::int64_t shift = pad - koff;  // i = o*stride - shift
  lo = shift <= 0 ? 0 : (shift + stride - 1) / stride;
  const std::int64_t limit = in + shift;  // o*stride < limit
  hi = limit <= 0 ? 0 : std::min(out, (limit + stride - 1) / stride);
  if (hi < lo) hi = lo;
}

}  // namespace detail

// x: (N,Ci,H,W)  w: (Co,Ci,kh,kw)  bias: (Co) or undefined
template <class R>
inline Tensor<R> conv2d(const Tensor<R>& x, const Tensor<R>& w, const Tensor<R>& bias,
                        std::int64_t stride = 1, std::int64_t pad = 0) {
  detail::check_finite("conv2d", x);
  detail::check_finite("conv2d", w);
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
    throw std::invalid_argument("conv2d: expected x (N,Ci,H,W) " + shape_str(x.shape()) +
                                " and w (Co,Ci,kh,kw) " + shape_str(w.shape()));
  const std::int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::int64_t Ho = detail::conv_out_extent(H, kh, stride, pad, "conv2d");
  const std::int64_t Wo = detail::conv_out_extent(W, kw, stride, pad, "conv2d");
  Tensor<R> out({N, Co, Ho, Wo});
  const R* px = x.data();
  const R* pw = w.data();
  R* po = out.data();
  parallel_for(N * Co, [&](std::int64_t lo_, std::int64_t hi_) {
    for (std::int64_t nc = lo_; nc < hi_; ++nc) {
      const std::int64_t n = nc / Co, co = nc % Co;
      R* plane = po + nc * Ho * Wo;
      if (bias.defined()) {
        const R bv = bias[co];
        for (std::int64_t i = 0; i < Ho * Wo; ++i) plane[i] = bv;
      }
      for (std::int64_t ci = 0; ci < Ci; ++ci)
        for (std::int64_t dy = 0; dy < kh; ++dy)
          for (std::int64_t ho = 0; ho < Ho; ++ho) {
            const std::int64_t hi2 = ho * stride - pad + dy;
            if (hi2 < 0 || hi2 >= H) continue;
            const R* xrow = px + ((n * Ci + ci) * H + hi2) * W;
            R* orow = plane + ho * Wo;
            for (std::int64_t dx = 0; dx < kw; ++dx) {
              const R wv = pw[((co * Ci + ci) * kh + dy) * kw + dx];
              std::int64_t wlo, whi;
              detail::conv_bounds(Wo, W, stride, pad, dx, wlo, whi);
              const std::int64_t off = dx - pad;
              for (std::int64_t wo = wlo; wo < whi; ++wo)
                orow[wo] += wv * xrow[wo * stride + off];
            }
          }
    }
  }, 1);
  if (Graph<R>::recording() && (x.tracked() || w.tracked() || (bias.defined() && bias.tracked()))) {
    auto nx = x.node();
    auto nw = w.node();
    auto nb = bias.defined() ? bias.node() : nullptr;
    detail::attach_node(out, [=](const Tensor<R>& g) {
      const R* pg = g.data();
      if (nx) {
        Tensor<R>& buf = nx->grad_buffer();
        R* pb = buf.data();
        parallel_for(N * Ci, [&](std::int64_t lo_, std::int64_t hi_) {
          for (std::int64_t nc = lo_; nc < hi_; ++nc) {
            const std::int64_t n = nc / Ci, ci = nc % Ci;
            for (std::int64_t hi2 = 0; hi2 < H; ++hi2)
              for (std::int64_t wi = 0; wi < W; ++wi) {
                R acc = 0;
                for (std::int64_t co = 0; co < Co; ++co)
                  for (std::int64_t dy = 0; dy < kh; ++dy) {
                    const std::int64_t hs = hi2 + pad - dy;
                    if (hs < 0 || hs % stride) continue;
                    const std::int64_t ho = hs / stride;
                    if (ho >= Ho) continue;
                    for (std::int64_t dx = 0; dx < kw; ++dx) {
                      const std::int64_t ws = wi + pad - dx;
                      if (ws < 0 || ws % stride) continue;
                      const std::int64_t wo = ws / stride;
                      if (wo >= Wo) continue;
                      acc += pg[((n * Co + co) * Ho + ho) * Wo + wo] *
                             w.data()[((co * Ci + ci) * kh + dy) * kw + dx];
                    }
                  }
                pb[(nc * H + hi2) * W + wi] += acc;
              }
          }
        }, 1);
      }
      if (nw) {
        Tensor<R>& buf = nw->grad_buffer();
        R* pb = buf.data();
        parallel_for(Co, [&](std::int64_t lo_, std::int64_t hi_) {
          for (std::int64_t co = lo_; co < hi_; ++co)
            for (std::int64_t ci = 0; ci < Ci; ++ci)
              for (std::int64_t dy = 0; dy < kh; ++dy)
                for (std::int64_t dx = 0; dx < kw; ++dx) {
                  R acc = 0;
                  for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t ho = 0; ho < Ho; ++ho) {
                      const std::int64_t hi2 = ho * stride - pad + dy;
                      if (hi2 < 0 || hi2 >= H) continue;
                      std::int64_t wlo, whi;
                      detail::conv_bounds(Wo, W, stride, pad, dx, wlo, whi);
                      const R* grow = pg + ((n * Co + co) * Ho + ho) * Wo;
                      const R* xrow = x.data() + ((n * Ci + ci) * H + hi2) * W + dx - pad;
                      for (std::int64_t wo = wlo; wo < whi; ++wo)
                        acc += grow[wo] * xrow[wo * stride];
                    }
                  pb[((co * Ci + ci) * kh + dy) * kw + dx] += acc;
                }
        }, 1);
      }
      if (nb) {
        Tensor<R>& buf = nb->grad_buffer();
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t co = 0; co < Co; ++co) {
            R acc = 0;
            const R* plane = pg + (n * Co + co) * Ho * Wo;
            for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += plane[i];
            buf[co] += acc;
          }
      }
    });
  }
  return out;
}

// x: (N,Ci,D,H,W)  w: (Co,Ci,kd,kh,kw)
template <class R>
inline Tensor<R> conv3d(const Tensor<R>& x, const Tensor<R>& w, const Tensor<R>& bias,
                        std::int64_t stride = 1, std::int64_t pad = 0) {
  detail::check_finite("conv3d", x);
  detail::check_finite("conv3d", w);
  if (x.rank() != 5 || w.rank() != 5 || x.dim(1) != w.dim(1))
    throw std::invalid_argument("conv3d: expected x (N,Ci,D,H,W) " + shape_str(x.shape()) +
                                " and w (Co,Ci,kd,kh,kw) " + shape_str(w.shape()));
  const std::int64_t N = x.dim(0), Ci = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::int64_t Co = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const std::int64_t Do = detail::conv_out_extent(D, kd, stride, pad, "conv3d");
  const std::int64_t Ho = detail::conv_out_extent(H, kh, stride, pad, "conv3d");
  const std::int64_t Wo = detail::conv_out_extent(W, kw, stride, pad, "conv3d");
  Tensor<R> out({N, Co, Do, Ho, Wo});
  const R* px = x.data();
  const R* pw = w.data();
  R* po = out.data();
  parallel_for(N * Co * Do, [&](std::int64_t lo_, std::int64_t hi_) {
    for (std::int64_t ncd = lo_; ncd < hi_; ++ncd) {
      const std::int64_t n = ncd / (Co * Do), co = (ncd / Do) % Co, do_ = ncd % Do;
      R* plane = po + ncd * Ho * Wo;
      if (bias.defined()) {
        const R bv = bias[co];
        for (std::int64_t i = 0; i < Ho * Wo; ++i) plane[i] = bv;
      }
      for (std::int64_t ci = 0; ci < Ci; ++ci)
        for (std::int64_t dz = 0; dz < kd; ++dz) {
          const std::int64_t di = do_ * stride - pad + dz;
          if (di < 0 || di >= D) continue;
          for (std::int64_t dy = 0; dy < kh; ++dy)
            for (std::int64_t ho = 0; ho < Ho; ++ho) {
              const std::int64_t hi2 = ho * stride - pad + dy;
              if (hi2 < 0 || hi2 >= H) continue;
              const R* xrow = px + (((n * Ci + ci) * D + di) * H + hi2) * W;
              R* orow = plane + ho * Wo;
              for (std::int64_t dx = 0; dx < kw; ++dx) {
                const R wv = pw[(((co * Ci + ci) * kd + dz) * kh + dy) * kw + dx];
                std::int64_t wlo, whi;
                detail::conv_bounds(Wo, W, stride, pad, dx, wlo, whi);
                const std::int64_t off = dx - pad;
                for (std::int64_t wo = wlo; wo < whi; ++wo)
                  orow[wo] += wv * xrow[wo * stride + off];
              }
            }
        }
    }
  }, 1);
  if (Graph<R>::recording() && (x.tracked() || w.tracked() || (bias.defined() && bias.tracked()))) {
    auto nx = x.node();
    auto nw = w.node();
    auto nb = bias.defined() ? bias.node() : nullptr;
    detail::attach_node(out, [=](const Tensor<R>& g) {
      const R* pg = g.data();
      if (nx) {
        Tensor<R>& buf = nx->grad_buffer();
        R* pb = buf.data();
        parallel_for(N * Ci * D, [&](std::int64_t lo_, std::int64_t hi_) {
          for (std::int64_t ncd = lo_; ncd < hi_; ++ncd) {
            const std::int64_t n = ncd / (Ci * D), ci = (ncd / D) % Ci, di = ncd % D;
            for (std::int64_t hi2 = 0; hi2 < H; ++hi2)
              for (std::int64_t wi = 0; wi < W; ++wi) {
                R acc = 0;
                for (std::int64_t co = 0; co < Co; ++co)
                  for (std::int64_t dz = 0; dz < kd; ++dz) {
                    const std::int64_t ds = di + pad - dz;
                    if (ds < 0 || ds % stride) continue;
                    const std::int64_t do_ = ds / stride;
                    if (do_ >= Do) continue;
                    for (std::int64_t dy = 0; dy < kh; ++dy) {
                      const std::int64_t hs = hi2 + pad - dy;
                      if (hs < 0 || hs % stride) continue;
                      const std::int64_t ho = hs / stride;
                      if (ho >= Ho) continue;
                      for (std::int64_t dx = 0; dx < kw; ++dx) {
                        const std::int64_t ws = wi + pad - dx;
                        if (ws < 0 || ws % stride) continue;
                        const std::int64_t wo = ws / stride;
                        if (wo >= Wo) continue;
                        acc += pg[(((n * Co + co) * Do + do_) * Ho + ho) * Wo + wo] *
                               w.data()[(((co * Ci + ci) * kd + dz) * kh + dy) * kw + dx];
                      }
                    }
                  }
                pb[(ncd * H + hi2) * W + wi] += acc;
              }
          }
        }, 1);
      }
      if (nw) {
        Tensor<R>& buf = nw->grad_buffer();
        R* pb = buf.data();
        parallel_for(Co, [&](std::int64_t lo_, std::int64_t hi_) {
          for (std::int64_t co = lo_; co < hi_; ++co)
            for (std::int64_t ci = 0; ci < Ci; ++ci)
              for (std::int64_t dz = 0; dz < kd; ++dz)
                for (std::int64_t dy = 0; dy < kh; ++dy)
                  for (std::int64_t dx = 0; dx < kw; ++dx) {
                    R acc = 0;
                    for (std::int64_t n = 0; n < N; ++n)
                      for (std::int64_t do_ = 0; do_ < Do; ++do_) {
                        const std::int64_t di = do_ * stride - pad + dz;
                        if (di < 0 || di >= D) continue;
                        for (std::int64_t ho = 0; ho < Ho; ++ho) {
                          const std::int64_t hi2 = ho * stride - pad + dy;
                          if (hi2 < 0 || hi2 >= H) continue;
                          std::int64_t wlo, whi;
                          detail::conv_bounds(Wo, W, stride, pad, dx, wlo, whi);
                          const R* grow = pg + (((n * Co + co) * Do + do_) * Ho + ho) * Wo;
                          const R* xrow =
                              x.data() + (((n * Ci + ci) * D + di) * H + hi2) * W + dx - pad;
                          for (std::int64_t wo = wlo; wo < whi; ++wo)
                            acc += grow[wo] * xrow[wo * stride];
                        }
                      }
                    pb[(((co * Ci + ci) * kd + dz) * kh + dy) * kw + dx] += acc;
                  }
        }, 1);
      }
      if (nb) {
        Tensor<R>& buf = nb->grad_buffer();
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t co = 0; co < Co; ++co) {
            R acc = 0;
            const R* block = pg + (n * Co + co) * Do * Ho * Wo;
            for (std::int64_t i = 0; i < Do * Ho * Wo; ++i) acc += block[i];
            buf[co] += acc;
          }
      }
    });
  }
  return out;
}

// x: (N,Ci,D,H,W)  w: (Ci,Co,kd,kh,kw); output extent (D-1)*stride - 2*pad + kd + out_pad
template <class R>
inline Tensor<R> conv_transpose3d(const Tensor<R>& x, const Tensor<R>& w, const Tensor<R>& bias,
                                  std::int64_t stride = 1, std::int64_t pad = 0,
                                  std::int64_t out_pad = 0) {
  detail::check_finite("transpose-conv3d", x);
  detail::check_finite("transpose-conv3d", w);
  if (x.rank() != 5 || w.rank() != 5 || x.dim(1) != w.dim(0))
    throw std::invalid_argument("transpose-conv3d: expected x (N,Ci,D,H,W) " +
                                shape_str(x.shape()) + " and w (Ci,Co,kd,kh,kw) " +
                                shape_str(w.shape()));
  const std::int64_t N = x.dim(0), Ci = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::int64_t Co = w.dim(1), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const std::int64_t Do = (D - 1) * stride - 2 * pad + kd + out_pad;
  const std::int64_t Ho = (H - 1) * stride - 2 * pad + kh + out_pad;
  const std::int64_t Wo = (W - 1) * stride - 2 * pad + kw + out_pad;
  if (Do < 1 || Ho < 1 || Wo < 1)
    throw std::invalid_argument("transpose-conv3d: empty output for input " +
                                shape_str(x.shape()));
  Tensor<R> out({N, Co, Do, Ho, Wo});
  const R* px = x.data();
  const R* pw = w.data();
  R* po = out.data();
  parallel_for(N * Co * Do, [&](std::int64_t lo_, std::int64_t hi_) {
    for (std::int64_t ncd = lo_; ncd < hi_; ++ncd) {
      const std::int64_t n = ncd / (Co * Do), co = (ncd / Do) % Co, do_ = ncd % Do;
      R* plane = po + ncd * Ho * Wo;
      if (bias.defined()) {
        const R bv = bias[co];
        for (std::int64_t i = 0; i < Ho * Wo; ++i) plane[i] = bv;
      }
      for (std::int64_t ci = 0; ci < Ci; ++ci)
        for (std::int64_t dz = 0; dz < kd; ++dz) {
          const std::int64_t dsrc = do_ + pad - dz;
          if (dsrc < 0 || dsrc % stride) continue;
          const std::int64_t di = dsrc / stride;
          if (di >= D) continue;
          for (std::int64_t ho = 0; ho < Ho; ++ho)
            for (std::int64_t dy = 0; dy < kh; ++dy) {
              const std::int64_t hsrc = ho + pad - dy;
              if (hsrc < 0 || hsrc % stride) continue;
              const std::int64_t hi2 = hsrc / stride;
              if (hi2 >= H) continue;
              const R* xrow = px + (((n * Ci + ci) * D + di) * H + hi2) * W;
              R* orow = plane + ho * Wo;
              for (std::int64_t wo = 0; wo < Wo; ++wo) {
                R acc = 0;
                for (std::int64_t dx = 0; dx < kw; ++dx) {
                  const std::int64_t wsrc = wo + pad - dx;
                  if (wsrc < 0 || wsrc % stride) continue;
                  const std::int64_t wi = wsrc / stride;
                  if (wi >= W) continue;
                  acc += xrow[wi] * pw[(((ci * Co + co) * kd + dz) * kh + dy) * kw + dx];
                }
                orow[wo] += acc;
              }
            }
        }
    }
  }, 1);
  if (Graph<R>::recording() && (x.tracked() || w.tracked() || (bias.defined() && bias.tracked()))) {
    auto nx = x.node();
    auto nw = w.node();
    auto nb = bias.defined() ? bias.node() : nullptr;
    detail::attach_node(out, [=](const Tensor<R>& g) {
      const R* pg = g.data();
      if (nx) {
        // d(out)/d(x) gathers like a forward convolution over g.
        Tensor<R>& buf = nx->grad_buffer();
        R* pb = buf.data();
        parallel_for(N * Ci * D, [&](std::int64_t lo_, std::int64_t hi_) {
          for (std::int64_t ncd = lo_; ncd < hi_; ++ncd) {
            const std::int64_t n = ncd / (Ci * D), ci = (ncd / D) % Ci, di = ncd % D;
            for (std::int64_t hi2 = 0; hi2 < H; ++hi2)
              for (std::int64_t wi = 0; wi < W; ++wi) {
                R acc = 0;
                for (std::int64_t co = 0; co < Co; ++co)
                  for (std::int64_t dz = 0; dz < kd; ++dz) {
                    const std::int64_t do_ = di * stride - pad + dz;
                    if (do_ < 0 || do_ >= Do) continue;
                    for (std::int64_t dy = 0; dy < kh; ++dy) {
                      const std::int64_t ho = hi2 * stride - pad + dy;
                      if (ho < 0 || ho >= Ho) continue;
                      for (std::int64_t dx = 0; dx < kw; ++dx) {
                        const std::int64_t wo = wi * stride - pad + dx;
                        if (wo < 0 || wo >= Wo) continue;
                        acc += pg[(((n * Co + co) * Do + do_) * Ho + ho) * Wo + wo] *
                               w.data()[(((ci * Co + co) * kd + dz) * kh + dy) * kw + dx];
                      }
                    }
                  }
                pb[(ncd * H + hi2) * W + wi] += acc;
              }
          }
        }, 1);
      }
      if (nw) {
        Tensor<R>& buf = nw->grad_buffer();
        R* pb = buf.data();
        parallel_for(Ci, [&](std::int64_t lo_, std::int64_t hi_) {
          for (std::int64_t ci = lo_; ci < hi_; ++ci)
            for (std::int64_t co = 0; co < Co; ++co)
              for (std::int64_t dz = 0; dz < kd; ++dz)
                for (std::int64_t dy = 0; dy < kh; ++dy)
                  for (std::int64_t dx = 0; dx < kw; ++dx) {
                    R acc = 0;
                    for (std::int64_t n = 0; n < N; ++n)
                      for (std::int64_t di = 0; di < D; ++di) {
                        const std::int64_t do_ = di * stride - pad + dz;
                        if (do_ < 0 || do_ >= Do) continue;
                        for (std::int64_t hi2 = 0; hi2 < H; ++hi2) {
                          const std::int64_t ho = hi2 * stride - pad + dy;
                          if (ho < 0 || ho >= Ho) continue;
                          for (std::int64_t wi = 0; wi < W; ++wi) {
                            const std::int64_t wo = wi * stride - pad + dx;
                            if (wo < 0 || wo >= Wo) continue;
                            acc += x.data()[(((n * Ci + ci) * D + di) * H + hi2) * W + wi] *
                                   pg[(((n * Co + co) * Do + do_) * Ho + ho) * Wo + wo];
                          }
                        }
                      }
                    pb[(((ci * Co + co) * kd + dz) * kh + dy) * kw + dx] += acc;
                  }
        }, 1);
      }
      if (nb) {
        Tensor<R>& buf = nb->grad_buffer();
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t co = 0; co < Co; ++co) {
            R acc = 0;
            const R* block = pg + (n * Co + co) * Do * Ho * Wo;
            for (std::int64_t i = 0; i < Do * Ho * Wo; ++i) acc += block[i];
            buf[co] += acc;
          }
      }
    });
  }
  return out;
}

}  // namespace mvsurf
