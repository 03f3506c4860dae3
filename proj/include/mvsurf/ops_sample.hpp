#pragma once

#include <cmath>
#include <memory>

#include "mvsurf/ops_elementwise.hpp"
#include "mvsurf/parallel.hpp"

namespace mvsurf {

// Sample result plus a 0/1 validity mask. The mask tensor never carries
// gradients; callers multiply it in as a constant.
template <class R>
struct SampleResult {
  Tensor<R> values;
  Tensor<R> mask;
};

// feat: (C,H,W); coords give continuous pixel positions with integer
// coordinates at sample centers. Out-of-bounds corners contribute zero and
// clear the mask; gradients flow into feat only.
template <class R>
inline SampleResult<R> bilinear_sample2d(const Tensor<R>& feat,
                                         std::shared_ptr<const std::vector<double>> xs,
                                         std::shared_ptr<const std::vector<double>> ys) {
  detail::check_finite("bilinear-sample-2d", feat);
  if (feat.rank() != 3)
    throw std::invalid_argument("bilinear-sample-2d: feature map must be (C,H,W), got " +
                                shape_str(feat.shape()));
  const std::int64_t C = feat.dim(0), H = feat.dim(1), W = feat.dim(2);
  const std::int64_t M = static_cast<std::int64_t>(xs->size());
  Tensor<R> out({M, C});
  Tensor<R> mask({M});
  const R* pf = feat.data();
  R* po = out.data();
  parallel_for(M, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      const double x = (*xs)[static_cast<std::size_t>(i)], y = (*ys)[static_cast<std::size_t>(i)];
      if (!std::isfinite(x) || !std::isfinite(y)) {
        mask[i] = 0;
        continue;
      }
      const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
      const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
      const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
      mask[i] = (x0 >= 0 && x0 + 1 <= W - 1 && y0 >= 0 && y0 + 1 <= H - 1) ? R(1) : R(0);
      const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy), w01 = (1 - fx) * fy,
                   w11 = fx * fy;
      const bool in00 = x0 >= 0 && x0 < W && y0 >= 0 && y0 < H;
      const bool in10 = x0 + 1 >= 0 && x0 + 1 < W && y0 >= 0 && y0 < H;
      const bool in01 = x0 >= 0 && x0 < W && y0 + 1 >= 0 && y0 + 1 < H;
      const bool in11 = x0 + 1 >= 0 && x0 + 1 < W && y0 + 1 >= 0 && y0 + 1 < H;
      for (std::int64_t c = 0; c < C; ++c) {
        const R* plane = pf + c * H * W;
        double acc = 0;
        if (in00) acc += w00 * static_cast<double>(plane[y0 * W + x0]);
        if (in10) acc += w10 * static_cast<double>(plane[y0 * W + x0 + 1]);
        if (in01) acc += w01 * static_cast<double>(plane[(y0 + 1) * W + x0]);
        if (in11) acc += w11 * static_cast<double>(plane[(y0 + 1) * W + x0 + 1]);
        po[i * C + c] = static_cast<R>(acc);
      }
    }
  }, 2048);
  if (Graph<R>::recording() && feat.tracked()) {
    auto nf = feat.node();
    detail::attach_node(out, [nf, xs, ys, C, H, W, M](const Tensor<R>& g) {
      Tensor<R>& buf = nf->grad_buffer();
      R* pb = buf.data();
      for (std::int64_t i = 0; i < M; ++i) {
        const double x = (*xs)[static_cast<std::size_t>(i)], y = (*ys)[static_cast<std::size_t>(i)];
        if (!std::isfinite(x) || !std::isfinite(y)) continue;
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
        const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
        const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
        const std::int64_t cx[4] = {x0, x0 + 1, x0, x0 + 1};
        const std::int64_t cy[4] = {y0, y0, y0 + 1, y0 + 1};
        for (int k = 0; k < 4; ++k) {
          if (cx[k] < 0 || cx[k] >= W || cy[k] < 0 || cy[k] >= H) continue;
          for (std::int64_t c = 0; c < C; ++c)
            pb[c * H * W + cy[k] * W + cx[k]] += g[i * C + c] * static_cast<R>(w[k]);
        }
      }
    });
  }
  return {out, mask};
}

// vol: (C,D,H,W); coords (x -> W, y -> H, z -> D) in index units.
template <class R>
inline SampleResult<R> trilinear_sample3d(const Tensor<R>& vol,
                                          std::shared_ptr<const std::vector<double>> xs,
                                          std::shared_ptr<const std::vector<double>> ys,
                                          std::shared_ptr<const std::vector<double>> zs) {
  detail::check_finite("trilinear-sample-3d", vol);
  if (vol.rank() != 4)
    throw std::invalid_argument("trilinear-sample-3d: volume must be (C,D,H,W), got " +
                                shape_str(vol.shape()));
  const std::int64_t C = vol.dim(0), D = vol.dim(1), H = vol.dim(2), W = vol.dim(3);
  const std::int64_t M = static_cast<std::int64_t>(xs->size());
  Tensor<R> out({M, C});
  Tensor<R> mask({M});
  const R* pv = vol.data();
  R* po = out.data();
  parallel_for(M, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      const double x = (*xs)[static_cast<std::size_t>(i)], y = (*ys)[static_cast<std::size_t>(i)],
                   z = (*zs)[static_cast<std::size_t>(i)];
      if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
        mask[i] = 0;
        continue;
      }
      const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
      const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
      const std::int64_t z0 = static_cast<std::int64_t>(std::floor(z));
      const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0),
                   fz = z - static_cast<double>(z0);
      mask[i] = (x0 >= 0 && x0 + 1 <= W - 1 && y0 >= 0 && y0 + 1 <= H - 1 && z0 >= 0 &&
                 z0 + 1 <= D - 1)
                    ? R(1)
                    : R(0);
      for (std::int64_t c = 0; c < C; ++c) {
        const R* grid = pv + c * D * H * W;
        double acc = 0;
        for (int k = 0; k < 8; ++k) {
          const std::int64_t xi = x0 + (k & 1), yi = y0 + ((k >> 1) & 1), zi = z0 + (k >> 2);
          if (xi < 0 || xi >= W || yi < 0 || yi >= H || zi < 0 || zi >= D) continue;
          const double wk = ((k & 1) ? fx : 1 - fx) * (((k >> 1) & 1) ? fy : 1 - fy) *
                            ((k >> 2) ? fz : 1 - fz);
          acc += wk * static_cast<double>(grid[(zi * H + yi) * W + xi]);
        }
        po[i * C + c] = static_cast<R>(acc);
      }
    }
  }, 2048);
  if (Graph<R>::recording() && vol.tracked()) {
    auto nv = vol.node();
    detail::attach_node(out, [nv, xs, ys, zs, C, D, H, W, M](const Tensor<R>& g) {
      Tensor<R>& buf = nv->grad_buffer();
      R* pb = buf.data();
      for (std::int64_t i = 0; i < M; ++i) {
        const double x = (*xs)[static_cast<std::size_t>(i)], y = (*ys)[static_cast<std::size_t>(i)],
                     z = (*zs)[static_cast<std::size_t>(i)];
        if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) continue;
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
        const std::int64_t z0 = static_cast<std::int64_t>(std::floor(z));
        const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0),
                     fz = z - static_cast<double>(z0);
        for (int k = 0; k < 8; ++k) {
          const std::int64_t xi = x0 + (k & 1), yi = y0 + ((k >> 1) & 1), zi = z0 + (k >> 2);
          if (xi < 0 || xi >= W || yi < 0 || yi >= H || zi < 0 || zi >= D) continue;
          const double wk = ((k & 1) ? fx : 1 - fx) * (((k >> 1) & 1) ? fy : 1 - fy) *
                            ((k >> 2) ? fz : 1 - fz);
          for (std::int64_t c = 0; c < C; ++c)
            pb[c * D * H * W + (zi * H + yi) * W + xi] += g[i * C + c] * static_cast<R>(wk);
        }
      }
    });
  }
  return {out, mask};
}

}  // namespace mvsurf
