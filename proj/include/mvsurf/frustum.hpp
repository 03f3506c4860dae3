#pragma once

#include <iostream>

#include "mvsurf/config.hpp"
#include "mvsurf/geometry.hpp"
#include "mvsurf/nn.hpp"

namespace mvsurf {

// Single-channel correlation volume over depth hypotheses for one reference
// view at one cascade level.
template <class R>
struct CorrelationFrustum {
  int ref_view = -1;
  int level = -1;
  Tensor<R> corr;               // (1, D, h, w)
  Tensor<R> coverage;           // (h*w), 1 where any source contributed
  Tensor<double> depth_values;  // (D, h, w), strictly increasing along D
};

template <class R>
struct RegularizedVolume {
  int ref_view = -1;
  int level = -1;
  Tensor<R> feat;               // (c, D, h, w) feature volume V'
  Tensor<R> prob;               // (D, h, w) softmax depth probabilities
  Tensor<R> depth;              // (1, h, w) soft-argmax expected depth
  Tensor<double> depth_values;  // (D, h, w)
};

// Pairwise correlation c_ij = <F_i, warp(F_j)> per hypothesis, aggregated
// over sources with each pair's max-over-depth as a pixel weight. Invalid
// warps contribute zero and are excluded from the max.
template <class R>
inline CorrelationFrustum<R> build_correlation(int ref, const Tensor<R>& feats,
                                               const std::vector<Camera>& cams,
                                               const Tensor<double>& depth_hyps, int level) {
  const std::int64_t N = feats.dim(0), C = feats.dim(1), h = feats.dim(2), w = feats.dim(3);
  if (N < 2) throw std::invalid_argument("build_correlation: need at least 2 views");
  const std::int64_t D = depth_hyps.dim(0);
  Tensor<R> ref_tokens = permute(reshape(slice(feats, 0, ref, 1), {C, h * w}), {1, 0});
  Tensor<R> corr;                             // (D, h*w)
  Tensor<R> coverage = Tensor<R>::zeros({h * w});  // constant, no grad
  for (std::int64_t j = 0; j < N; ++j) {
    if (j == ref) continue;
    Tensor<R> src = reshape(slice(feats, 0, j, 1), {C, h, w});
    WarpResult<R> warp = homography_warp(src, cams[static_cast<std::size_t>(j)],
                                         cams[static_cast<std::size_t>(ref)], depth_hyps);
    // channel-mean dot product keeps the volume scale independent of C
    Tensor<R> c_ij = sum(mul(warp.feat, ref_tokens), {2}, false, R(1) / static_cast<R>(C));
    c_ij = mul(c_ij, warp.valid);
    // pixel weight: max over valid hypotheses only
    Tensor<R> offset({D, h * w});
    Tensor<R> any_valid({h * w});
    for (std::int64_t i = 0; i < D * h * w; ++i)
      offset[i] = (warp.valid[i] - R(1)) * R(1e9);
    for (std::int64_t p = 0; p < h * w; ++p) {
      R any = 0;
      for (std::int64_t d = 0; d < D; ++d) any = std::max(any, warp.valid[d * h * w + p]);
      any_valid[p] = any;
      coverage[p] = std::max(coverage[p], any);
    }
    Tensor<R> weight = mul(max_axis(add(c_ij, offset), 0).values, any_valid);  // (h*w)
    Tensor<R> contrib = mul(c_ij, weight);
    corr = corr.defined() ? add(corr, contrib) : contrib;
  }
  return {ref, level, reshape(corr, {1, D, h, w}), coverage, depth_hyps};
}

// 3-scale 3D encoder-decoder with skip additions; emits the depth
// distribution and the feature volume V'.
template <class R>
class FrustumRegularizer {
 public:
  FrustumRegularizer() = default;
  FrustumRegularizer(ParamStore<R>& ps, const std::string& name, const ModelConfig& cfg,
                     Rng& rng) {
    const int b = cfg.reg_base_channels;
    const int c = cfg.vol_channels;
    const int fk = cfg.vol_feat_kernel;
    enc0_ = Conv3d<R>(ps, name + ".enc0", 1, b, 3, 1, 1, rng);
    enc1_ = Conv3d<R>(ps, name + ".enc1", b, 2 * b, 3, 2, 1, rng);
    enc2_ = Conv3d<R>(ps, name + ".enc2", 2 * b, 4 * b, 3, 2, 1, rng);
    dec1_ = ConvT3d<R>(ps, name + ".dec1", 4 * b, 2 * b, 3, 2, 1, 1, rng);
    dec0_ = ConvT3d<R>(ps, name + ".dec0", 2 * b, b, 3, 2, 1, 1, rng);
    prob_head_ = Conv3d<R>(ps, name + ".prob", b, 1, 3, 1, 1, rng);
    // zero-initialized head: the initial depth distribution is exactly
    // uniform, so the soft-argmax starts at the hypothesis mean
    std::fill(prob_head_.w->value.data(),
              prob_head_.w->value.data() + prob_head_.w->value.numel(), R(0));
    feat_a_ = Conv3d<R>(ps, name + ".feat_a", b, c, fk, 1, fk / 2, rng);
    feat_b_ = Conv3d<R>(ps, name + ".feat_b", c, c, 1, 1, 0, rng);
  }

  RegularizedVolume<R> operator()(const CorrelationFrustum<R>& frustum) const {
    const Tensor<double>& hyps = frustum.depth_values;
    const std::int64_t D = hyps.dim(0), h = hyps.dim(1), w = hyps.dim(2);
    Tensor<R> x = reshape(frustum.corr, {1, 1, D, h, w});
    Tensor<R> x0 = relu(enc0_(x));
    Tensor<R> x1 = relu(enc1_(x0));
    Tensor<R> x2 = relu(enc2_(x1));
    Tensor<R> u1 = relu(add(crop_to(dec1_(x2), x1.shape()), x1));
    Tensor<R> v = relu(add(crop_to(dec0_(u1), x0.shape()), x0));

    Tensor<R> logits = reshape(prob_head_(v), {D, h * w});
    Tensor<R> prob = softmax(logits, 0);
    Tensor<R> hyps_r = hyps.template cast<R>().view({D, h * w});
    Tensor<R> depth = reshape(sum(mul(prob, hyps_r), {0}), {1, h, w});

    Tensor<R> vp = feat_b_(relu(feat_a_(v)));
    RegularizedVolume<R> out;
    out.ref_view = frustum.ref_view;
    out.level = frustum.level;
    out.feat = reshape(vp, {vp.dim(1), D, h, w});
    out.prob = reshape(prob, {D, h, w});
    out.depth = depth;
    out.depth_values = hyps;
    return out;
  }

 private:
  // Transposed convolutions can overshoot odd extents by one; crop back.
  static Tensor<R> crop_to(const Tensor<R>& t, const Shape& want) {
    Tensor<R> out = t;
    for (int axis = 2; axis < 5; ++axis)
      if (out.dim(axis) > want[static_cast<std::size_t>(axis)])
        out = slice(out, axis, 0, want[static_cast<std::size_t>(axis)]);
    return out;
  }

  Conv3d<R> enc0_, enc1_, enc2_, prob_head_, feat_a_, feat_b_;
  ConvT3d<R> dec1_, dec0_;
};

template <class R>
struct CascadeResult {
  // volumes[view * levels + level]
  std::vector<RegularizedVolume<R>> volumes;
  int num_views = 0, levels = 0;

  const RegularizedVolume<R>& at(int view, int level) const {
    return volumes[static_cast<std::size_t>(view * levels + level)];
  }
  // finest-level depth map of one reference view
  const Tensor<R>& final_depth(int view) const { return at(view, levels - 1).depth; }
};

// Cascaded frustum construction with every view serving once as reference.
// Level 0 sweeps [depth_min, depth_max] uniformly; finer levels re-center
// per pixel on the previous soft-argmax depth with the range shrunk by
// cascade_shrink, clamped into the parent hull padded by one parent interval
// (hypotheses are detached from gradient flow).
template <class R>
class FrustumPipeline {
 public:
  FrustumPipeline() = default;
  FrustumPipeline(ParamStore<R>& ps, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    for (int l = 0; l < cfg.levels(); ++l)
      regs_.emplace_back(ps, "frustum.reg.l" + std::to_string(l), cfg, rng);
  }

  // match_feats: per level (N, C_l, h_l, w_l), coarse -> fine.
  // cams: full-resolution cameras.
  CascadeResult<R> cascade(const std::vector<Tensor<R>>& match_feats,
                           const std::vector<Camera>& cams) const {
    const int L = cfg_.levels();
    const std::int64_t N = match_feats[0].dim(0);
    CascadeResult<R> result;
    result.num_views = static_cast<int>(N);
    result.levels = L;
    result.volumes.resize(static_cast<std::size_t>(N * L));
    std::vector<std::vector<Camera>> cams_at_level = scale_cameras(cams);
    for (std::int64_t ref = 0; ref < N; ++ref) {
      Tensor<double> prev_depth, prev_lo, prev_hi;  // previous level, (h,w)
      for (int l = 0; l < L; ++l) {
        const std::int64_t h = match_feats[static_cast<std::size_t>(l)].dim(2);
        const std::int64_t w = match_feats[static_cast<std::size_t>(l)].dim(3);
        const Camera& ref_cam = cams[static_cast<std::size_t>(ref)];
        Tensor<double> hyps =
            l == 0 ? uniform_hypotheses(ref_cam, h, w)
                   : refined_hypotheses(ref_cam, l, h, w, prev_depth, prev_lo, prev_hi);
        CorrelationFrustum<R> frustum =
            build_correlation(static_cast<int>(ref), match_feats[static_cast<std::size_t>(l)],
                              cams_at_level[static_cast<std::size_t>(l)], hyps, l);
        RegularizedVolume<R> vol = regs_[static_cast<std::size_t>(l)](frustum);
        // detach the depth estimate for the next level's hypotheses
        prev_depth = Tensor<double>({h, w});
        prev_lo = Tensor<double>({h, w});
        prev_hi = Tensor<double>({h, w});
        for (std::int64_t p = 0; p < h * w; ++p) {
          prev_depth[p] = static_cast<double>(vol.depth[p]);
          prev_lo[p] = hyps[p];
          prev_hi[p] = hyps[(hyps.dim(0) - 1) * h * w + p];
        }
        result.volumes[static_cast<std::size_t>(ref * L + l)] = std::move(vol);
      }
    }
    return result;
  }

  std::vector<std::vector<Camera>> scale_cameras(const std::vector<Camera>& cams) const {
    std::vector<std::vector<Camera>> out;
    for (int l = 0; l < cfg_.levels(); ++l) {
      const double s = 1.0 / static_cast<double>(std::int64_t{1} << (cfg_.levels() - 1 - l));
      std::vector<Camera> level;
      for (const Camera& c : cams) level.push_back(c.scaled(s, s));
      out.push_back(std::move(level));
    }
    return out;
  }

  const ModelConfig& config() const { return cfg_; }

 private:
  Tensor<double> uniform_hypotheses(const Camera& cam, std::int64_t h, std::int64_t w) const {
    const std::int64_t D = cfg_.depth_hyps[0];
    Tensor<double> hyps({D, h, w});
    for (std::int64_t d = 0; d < D; ++d) {
      const double z =
          cam.depth_min + (cam.depth_max - cam.depth_min) * static_cast<double>(d) /
                              static_cast<double>(D - 1);
      for (std::int64_t p = 0; p < h * w; ++p) hyps[d * h * w + p] = z;
    }
    return hyps;
  }

  Tensor<double> refined_hypotheses(const Camera& cam, int level, std::int64_t h, std::int64_t w,
                                    const Tensor<double>& prev_depth, const Tensor<double>& prev_lo,
                                    const Tensor<double>& prev_hi) const {
    const std::int64_t D = cfg_.depth_hyps[static_cast<std::size_t>(level)];
    const std::int64_t hp = prev_depth.dim(0), wp = prev_depth.dim(1);
    const std::int64_t Dp = cfg_.depth_hyps[static_cast<std::size_t>(level - 1)];
    double range = (cam.depth_max - cam.depth_min);
    for (int l = 0; l < level; ++l) range *= cfg_.cascade_shrink;
    if (range < 1e-6) {
      std::cerr << "frustum: hypothesis range collapsed at level " << level
                << "; clamping to 1e-6\n";
      range = 1e-6;
    }
    Tensor<double> hyps({D, h, w});
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        // nearest parent pixel
        const std::int64_t yp = std::min(hp - 1, y * hp / h), xp = std::min(wp - 1, x * wp / w);
        const double lo_par = prev_lo[yp * wp + xp], hi_par = prev_hi[yp * wp + xp];
        const double interval = (hi_par - lo_par) / static_cast<double>(Dp - 1);
        double center = prev_depth[yp * wp + xp];
        // stay inside the parent hull padded by one parent interval
        const double lo_lim = lo_par - interval + range / 2.0;
        const double hi_lim = hi_par + interval - range / 2.0;
        if (lo_lim <= hi_lim) center = std::clamp(center, lo_lim, hi_lim);
        center = std::clamp(center, cam.depth_min + range / 2.0, cam.depth_max - range / 2.0);
        for (std::int64_t d = 0; d < D; ++d)
          hyps[(d * h + y) * w + x] =
              center - range / 2.0 + range * static_cast<double>(d) / static_cast<double>(D - 1);
      }
    return hyps;
  }

  ModelConfig cfg_;
  std::vector<FrustumRegularizer<R>> regs_;
};

// Global feature for 3D points: per level, project into every view's frustum
// grid, trilinear-sample V' and sum over views; levels are concatenated.
// Points outside every frustum get a zero feature and zero mask.
template <class R>
struct GlobalFeatureResult {
  Tensor<R> feat;  // (M, levels * vol_channels)
  Tensor<R> mask;  // (M), constant
};

template <class R>
inline GlobalFeatureResult<R> sample_global_feature(const std::vector<Vec3>& points,
                                                    const CascadeResult<R>& volumes,
                                                    const std::vector<Camera>& cams,
                                                    const ModelConfig& cfg) {
  const std::int64_t M = static_cast<std::int64_t>(points.size());
  const int L = volumes.levels;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<Tensor<R>> level_feats;
  Tensor<R> any_mask({M});
  for (int l = 0; l < L; ++l) {
    Tensor<R> level_sum;
    for (int v = 0; v < volumes.num_views; ++v) {
      const RegularizedVolume<R>& vol = volumes.at(v, l);
      const std::int64_t D = vol.depth_values.dim(0), h = vol.depth_values.dim(1),
                         w = vol.depth_values.dim(2);
      // the frustum grid resolution fixes the camera scale
      const Camera cam = cams[static_cast<std::size_t>(v)].scaled(
          static_cast<double>(w) / cams[static_cast<std::size_t>(v)].width,
          static_cast<double>(h) / cams[static_cast<std::size_t>(v)].height);
      auto xs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(M));
      auto ys = std::make_shared<std::vector<double>>(static_cast<std::size_t>(M));
      auto zs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(M));
      for (std::int64_t i = 0; i < M; ++i) {
        double u, vv, z;
        cam.project(points[static_cast<std::size_t>(i)], u, vv, z);
        if (z <= 0 || !std::isfinite(u) || !std::isfinite(vv)) {
          (*xs)[static_cast<std::size_t>(i)] = nan;
          (*ys)[static_cast<std::size_t>(i)] = nan;
          (*zs)[static_cast<std::size_t>(i)] = nan;
          continue;
        }
        // fractional hypothesis index from the nearest pixel's ladder
        const std::int64_t px = std::clamp<std::int64_t>(std::llround(u), 0, w - 1);
        const std::int64_t py = std::clamp<std::int64_t>(std::llround(vv), 0, h - 1);
        const double lo = vol.depth_values[py * w + px];
        const double hi = vol.depth_values[(D - 1) * h * w + py * w + px];
        const double step = (hi - lo) / static_cast<double>(D - 1);
        (*xs)[static_cast<std::size_t>(i)] = u;
        (*ys)[static_cast<std::size_t>(i)] = vv;
        (*zs)[static_cast<std::size_t>(i)] = (z - lo) / step;
      }
      SampleResult<R> sampled = trilinear_sample3d(vol.feat, xs, ys, zs);
      level_sum = level_sum.defined() ? add(level_sum, sampled.values) : sampled.values;
      for (std::int64_t i = 0; i < M; ++i)
        any_mask[i] = std::max(any_mask[i], sampled.mask[i]);
    }
    level_feats.push_back(level_sum);
  }
  (void)cfg;
  return {concat(level_feats, 1), any_mask};
}

}  // namespace mvsurf
