#pragma once

#include <algorithm>

#include "mvsurf/ops_elementwise.hpp"

namespace mvsurf {

// Zero-copy reshape; the node keeps the chain to the source buffer.
template <class R>
inline Tensor<R> reshape(const Tensor<R>& x, Shape new_shape) {
  Tensor<R> out = x.view(std::move(new_shape));
  if (Graph<R>::recording() && x.tracked()) {
    auto nx = x.node();
    const Shape xs = x.shape();
    detail::attach_node(out, [nx, xs](const Tensor<R>& g) { nx->accumulate(g.view(xs)); });
  }
  return out;
}

template <class R>
inline Tensor<R> permute(const Tensor<R>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r)
    throw std::invalid_argument("permute: order has " + std::to_string(perm.size()) +
                                " axes for rank " + std::to_string(r));
  Shape os(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) os[static_cast<std::size_t>(i)] = x.dim(perm[static_cast<std::size_t>(i)]);
  Tensor<R> out(os);
  const Shape xst = row_major_strides(x.shape());
  std::vector<std::int64_t> st(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) st[static_cast<std::size_t>(i)] = xst[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  detail::broadcast_loop(os, st, std::vector<std::int64_t>(static_cast<std::size_t>(r), 0),
                         [&](std::int64_t i, std::int64_t ox, std::int64_t) { out[i] = x[ox]; });
  if (Graph<R>::recording() && x.tracked()) {
    auto nx = x.node();
    detail::attach_node(out, [nx, os, st, r](const Tensor<R>& g) {
      Tensor<R>& buf = nx->grad_buffer();
      detail::broadcast_loop(os, st, std::vector<std::int64_t>(static_cast<std::size_t>(r), 0),
                             [&](std::int64_t i, std::int64_t ox, std::int64_t) { buf[ox] += g[i]; });
    });
  }
  return out;
}

template <class R>
inline Tensor<R> slice(const Tensor<R>& x, int axis, std::int64_t start, std::int64_t len) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r || start < 0 || len < 1 || start + len > x.dim(axis))
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") out of bounds for axis " +
                                std::to_string(axis) + " of " + shape_str(x.shape()));
  Shape os = x.shape();
  os[static_cast<std::size_t>(axis)] = len;
  Tensor<R> out(os);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  const std::int64_t xa = x.dim(axis);
  const R* px = x.data();
  R* po = out.data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::memcpy(po + o * len * inner, px + (o * xa + start) * inner,
                static_cast<std::size_t>(len * inner) * sizeof(R));
  if (Graph<R>::recording() && x.tracked()) {
    auto nx = x.node();
    detail::attach_node(out, [nx, outer, inner, len, xa, start](const Tensor<R>& g) {
      Tensor<R>& buf = nx->grad_buffer();
      for (std::int64_t o = 0; o < outer; ++o) {
        R* dst = buf.data() + (o * xa + start) * inner;
        const R* src = g.data() + o * len * inner;
        for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

// Nearest-neighbor upsampling of (N,C,H,W) by an integer factor.
template <class R>
inline Tensor<R> upsample2d_nearest(const Tensor<R>& x, std::int64_t factor) {
  if (x.rank() != 4) throw std::invalid_argument("upsample2d: expected (N,C,H,W)");
  const std::int64_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<R> out({x.dim(0), x.dim(1), H * factor, W * factor});
  const std::int64_t Ho = H * factor, Wo = W * factor;
  for (std::int64_t nc = 0; nc < NC; ++nc)
    for (std::int64_t y = 0; y < Ho; ++y) {
      const R* src = x.data() + (nc * H + y / factor) * W;
      R* dst = out.data() + (nc * Ho + y) * Wo;
      for (std::int64_t xo = 0; xo < Wo; ++xo) dst[xo] = src[xo / factor];
    }
  if (Graph<R>::recording() && x.tracked()) {
    auto nx = x.node();
    detail::attach_node(out, [nx, NC, H, W, factor, Ho, Wo](const Tensor<R>& g) {
      Tensor<R>& buf = nx->grad_buffer();
      for (std::int64_t nc = 0; nc < NC; ++nc)
        for (std::int64_t y = 0; y < Ho; ++y) {
          R* dst = buf.data() + (nc * H + y / factor) * W;
          const R* src = g.data() + (nc * Ho + y) * Wo;
          for (std::int64_t xo = 0; xo < Wo; ++xo) dst[xo / factor] += src[xo];
        }
    });
  }
  return out;
}

template <class R>
inline Tensor<R> concat(const std::vector<Tensor<R>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concatenate: no inputs");
  const int r = parts[0].rank();
  if (axis < 0) axis += r;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw std::invalid_argument("concatenate: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && p.dim(i) != parts[0].dim(i))
        throw std::invalid_argument("concatenate: shapes " + shape_str(parts[0].shape()) +
                                    " and " + shape_str(p.shape()) + " differ off axis " +
                                    std::to_string(axis));
    total += p.dim(axis);
  }
  Shape os = parts[0].shape();
  os[static_cast<std::size_t>(axis)] = total;
  Tensor<R> out(os);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= os[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= os[static_cast<std::size_t>(i)];
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t pa = p.dim(axis);
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * total + off) * inner, p.data() + o * pa * inner,
                  static_cast<std::size_t>(pa * inner) * sizeof(R));
    off += pa;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.tracked();
  if (Graph<R>::recording() && any) {
    std::vector<std::shared_ptr<Node<R>>> nodes;
    std::vector<std::int64_t> extents;
    for (const auto& p : parts) {
      nodes.push_back(p.node());
      extents.push_back(p.dim(axis));
    }
    detail::attach_node(out, [nodes, extents, outer, inner, total](const Tensor<R>& g) {
      std::int64_t off2 = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        const std::int64_t pa = extents[k];
        if (nodes[k]) {
          Tensor<R>& buf = nodes[k]->grad_buffer();
          for (std::int64_t o = 0; o < outer; ++o) {
            R* dst = buf.data() + o * pa * inner;
            const R* src = g.data() + (o * total + off2) * inner;
            for (std::int64_t i = 0; i < pa * inner; ++i) dst[i] += src[i];
          }
        }
        off2 += pa;
      }
    });
  }
  return out;
}

}  // namespace mvsurf
