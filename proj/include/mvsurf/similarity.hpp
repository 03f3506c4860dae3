#pragma once

#include "mvsurf/config.hpp"
#include "mvsurf/geometry.hpp"

namespace mvsurf {

// Group-wise cosine similarity of coarsest-level matching features over all
// view pairs, averaged per point. The vector length equals the group count,
// independent of how many views are given.
template <class R>
struct SimilarityEncoding {
  Tensor<R> values;  // (M, G), entries in [-1, 1]
  Tensor<R> mask;    // (M), 0 where every pair was invalid
};

// coarse_feats: (N, C, h, w) matching features at the coarsest level;
// cams must already be scaled to that resolution.
template <class R>
inline SimilarityEncoding<R> encode_similarity(const std::vector<Vec3>& points,
                                               const Tensor<R>& coarse_feats,
                                               const std::vector<Camera>& cams, int groups) {
  const std::int64_t N = coarse_feats.dim(0), C = coarse_feats.dim(1), h = coarse_feats.dim(2),
                     w = coarse_feats.dim(3);
  const std::int64_t M = static_cast<std::int64_t>(points.size());
  if (C % groups != 0)
    throw std::invalid_argument("encode_similarity: " + std::to_string(C) +
                                " channels not divisible into " + std::to_string(groups) +
                                " groups");
  const std::int64_t gc = C / groups;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  // per-view point features (M, C) + validity
  std::vector<Tensor<R>> view_feats(static_cast<std::size_t>(N));
  std::vector<Tensor<R>> view_valid(static_cast<std::size_t>(N));
  for (std::int64_t v = 0; v < N; ++v) {
    auto xs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(M));
    auto ys = std::make_shared<std::vector<double>>(static_cast<std::size_t>(M));
    for (std::int64_t i = 0; i < M; ++i) {
      double u, vv, z;
      cams[static_cast<std::size_t>(v)].project(points[static_cast<std::size_t>(i)], u, vv, z);
      (*xs)[static_cast<std::size_t>(i)] = z > 0 ? u : nan;
      (*ys)[static_cast<std::size_t>(i)] = z > 0 ? vv : nan;
    }
    Tensor<R> view = reshape(slice(coarse_feats, 0, v, 1), {C, h, w});
    SampleResult<R> s = bilinear_sample2d(view, xs, ys);
    view_feats[static_cast<std::size_t>(v)] = s.values;
    view_valid[static_cast<std::size_t>(v)] = s.mask;
  }

  // average group-wise cosine over valid pairs
  Tensor<R> acc;                      // (M, G)
  Tensor<R> pair_count({M});          // constant
  for (std::int64_t i = 0; i < N; ++i)
    for (std::int64_t j = i + 1; j < N; ++j) {
      Tensor<R> pv({M});  // both projections valid
      for (std::int64_t m = 0; m < M; ++m)
        pv[m] = view_valid[static_cast<std::size_t>(i)][m] *
                view_valid[static_cast<std::size_t>(j)][m];
      std::vector<Tensor<R>> group_sims;
      for (int g = 0; g < groups; ++g) {
        Tensor<R> fi = slice(view_feats[static_cast<std::size_t>(i)], 1, g * gc, gc);
        Tensor<R> fj = slice(view_feats[static_cast<std::size_t>(j)], 1, g * gc, gc);
        group_sims.push_back(reshape(cosine_similarity(fi, fj, 1), {M, 1}));
      }
      Tensor<R> sims = mul(concat(group_sims, 1), reshape(pv, {M, 1}));
      acc = acc.defined() ? add(acc, sims) : sims;
      for (std::int64_t m = 0; m < M; ++m) pair_count[m] += pv[m];
    }

  Tensor<R> mask({M});
  Tensor<R> denom({M});
  for (std::int64_t m = 0; m < M; ++m) {
    mask[m] = pair_count[m] > R(0) ? R(1) : R(0);
    denom[m] = std::max(pair_count[m], R(1));
  }
  Tensor<R> values = div(acc, reshape(denom, {M, 1}));
  return {values, mask};
}

}  // namespace mvsurf
