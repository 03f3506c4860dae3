#pragma once

#include <functional>
#include <optional>

#include "mvsurf/attention.hpp"
#include "mvsurf/config.hpp"
#include "mvsurf/frustum.hpp"
#include "mvsurf/geometry.hpp"
#include "mvsurf/rng.hpp"
#include "mvsurf/similarity.hpp"

namespace mvsurf {

// Per-ray sample set with everything the reconstruction transformers consume.
template <class R>
struct SampleBatch {
  std::int64_t num_rays = 0;
  std::int64_t samples_per_ray = 0;
  RayBatch rays;
  std::vector<double> ts;      // (R*M), strictly increasing per ray
  std::vector<Vec3> positions; // (R*M)
  std::vector<double> z_vals;  // target-camera depth of each sample (t * dz)
  std::vector<double> z_prior; // per-ray intermediate depth z_d

  // gathered per-sample features
  Tensor<R> view_feats;   // (N, R*M, C_img)
  Tensor<R> view_colors;  // (N, R*M, 3)
  Tensor<R> view_valid;   // (N, R*M), constant 0/1
  Tensor<R> vol_feat;     // (R*M, levels * vol_channels)
  Tensor<R> vol_mask;     // (R*M), constant
  Tensor<R> sim_feat;     // (R*M, groups)
  Tensor<R> sim_mask;     // (R*M), constant
};

template <class R>
struct RenderOutput {
  Tensor<R> color;      // (R, 3)
  Tensor<R> depth_t;    // (R, 1) expected ray length (+ far residual)
  Tensor<R> depth_z;    // (R, 1) the same depth in target-camera z units
  Tensor<R> weights;    // (R, M) T_m * alpha_m
  Tensor<R> sdf;        // (R, M)
  Tensor<R> opacity;    // (R, 1) accumulated weight
  Tensor<R> ray_valid;  // (R), constant: 0 when no view saw any sample
};

// ---------------------------------------------------------------------------
// hierarchical sampling

// Coarse t values: uniform bins over [near, far]; midpoints in eval mode,
// stratified jitter during training.
inline std::vector<double> coarse_ts(double t_near, double t_far, int count, Rng* rng) {
  std::vector<double> ts(static_cast<std::size_t>(count));
  const double step = (t_far - t_near) / count;
  for (int k = 0; k < count; ++k) {
    const double u = rng ? rng->uniform() : 0.5;
    ts[static_cast<std::size_t>(k)] = t_near + (k + u) * step;
  }
  return ts;
}

// Sinusoidal encoding of per-sample depth offsets: octave k contributes
// sin/cos at frequency 2^k * base. gamma(0) is all-zero sines, all-one
// cosines, and the encoding depends only on the difference z - z_d.
template <class R>
inline Tensor<R> ray_positional_encoding(const std::vector<double>& dz, int octaves,
                                         double base_freq) {
  const std::int64_t B = static_cast<std::int64_t>(dz.size());
  Tensor<R> pe({B, 2 * static_cast<std::int64_t>(octaves)});
  for (std::int64_t i = 0; i < B; ++i)
    for (int k = 0; k < octaves; ++k) {
      const double w = 2.0 * M_PI * base_freq * static_cast<double>(std::int64_t{1} << k);
      pe[i * 2 * octaves + 2 * k] = static_cast<R>(std::sin(w * dz[static_cast<std::size_t>(i)]));
      pe[i * 2 * octaves + 2 * k + 1] =
          static_cast<R>(std::cos(w * dz[static_cast<std::size_t>(i)]));
    }
  return pe;
}

// Inverse-CDF draws from a histogram over the coarse bins: weight k covers
// [near + k*step, near + (k+1)*step).
inline std::vector<double> importance_ts(double t_near, double t_far,
                                         const std::vector<double>& bin_weights, int count,
                                         Rng* rng) {
  const int bins = static_cast<int>(bin_weights.size());
  const double step = (t_far - t_near) / bins;
  std::vector<double> cdf(static_cast<std::size_t>(bins) + 1, 0.0);
  double total = 0;
  for (int k = 0; k < bins; ++k) {
    total += std::max(bin_weights[static_cast<std::size_t>(k)], 0.0) + 1e-5;
    cdf[static_cast<std::size_t>(k) + 1] = total;
  }
  std::vector<double> ts(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double u = (rng ? rng->uniform() : (i + 0.5) / count) * total;
    int k = static_cast<int>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()) - 1;
    k = std::clamp(k, 0, bins - 1);
    const double lo = cdf[static_cast<std::size_t>(k)], hi = cdf[static_cast<std::size_t>(k) + 1];
    const double frac = hi > lo ? (u - lo) / (hi - lo) : 0.5;
    ts[static_cast<std::size_t>(i)] = t_near + (k + frac) * step;
  }
  return ts;
}

// ---------------------------------------------------------------------------
// reconstruction transformers and volume rendering

template <class R>
class Renderer {
 public:
  Renderer() = default;
  Renderer(ParamStore<R>& ps, const ModelConfig& cfg, Rng& rng, double scene_depth_range = 1.0)
      : cfg_(cfg) {
    const std::string p = "renderer.";
    const std::int64_t c_img = cfg.fpn_channels.back() + 3 + 1;
    view_embed_ = Linear<R>(ps, p + "agg.view_embed", c_img, cfg.d_agg, rng);
    vol_embed_ = Linear<R>(ps, p + "agg.vol_embed",
                           static_cast<std::int64_t>(cfg.levels()) * cfg.vol_channels, cfg.d_agg,
                           rng);
    sim_embed_ = Linear<R>(ps, p + "agg.sim_embed", cfg.sim_groups, cfg.d_agg, rng);
    f0_ = ps.create(p + "agg.f0", init::uniform_fan_in<R>({1, cfg.d_agg}, cfg.d_agg, rng));
    for (int b = 0; b < cfg.agg_blocks; ++b)
      agg_blocks_.emplace_back(ps, p + "agg.b" + std::to_string(b), cfg.d_agg, cfg.agg_heads,
                               rng);
    blend_head_ = Linear<R>(ps, p + "agg.blend", cfg.d_agg, 1, rng);
    ray_embed_ = Linear<R>(ps, p + "ray.embed", cfg.d_agg + 2 * cfg.pe_octaves, cfg.d_ray, rng);
    for (int b = 0; b < cfg.ray_blocks; ++b)
      ray_blocks_.emplace_back(ps, p + "ray.b" + std::to_string(b), cfg.d_ray, cfg.ray_heads,
                               rng);
    sdf_hidden_ = Linear<R>(ps, p + "sdf.hidden", cfg.d_ray, cfg.d_ray, rng);
    sdf_out_ = Linear<R>(ps, p + "sdf.out", cfg.d_ray, 1, rng);
    // sharpness s = exp(log_s); initialized so the sigmoid slope spans the
    // scene depth range (s = 4 / range gives slope 1/range at zero)
    log_sharpness_ = ps.create(
        p + "sdf.log_sharpness",
        Tensor<R>::scalar(static_cast<R>(std::log(4.0 / std::max(1e-6, scene_depth_range)))));
    pe_base_freq_ = 1.0 / std::max(1e-9, scene_depth_range);
  }

  // View aggregation: learned token + per-view tokens + volume and similarity
  // tokens through self-attention. Returns the fused per-sample feature and
  // masked-softmax blending weights over views.
  struct Aggregated {
    Tensor<R> f_p;            // (B, d_agg)
    Tensor<R> blend_weights;  // (B, N), zero rows where no view is valid
  };

  Aggregated aggregate_views(const SampleBatch<R>& batch) const {
    const std::int64_t N = batch.view_feats.dim(0);
    const std::int64_t B = batch.view_feats.dim(1);
    std::vector<Tensor<R>> tokens;
    tokens.push_back(reshape(matmul(Tensor<R>::ones({B, 1}), f0_->value), {B, 1, cfg_.d_agg}));
    for (std::int64_t v = 0; v < N; ++v) {
      Tensor<R> fv = reshape(slice(batch.view_feats, 0, v, 1), {B, batch.view_feats.dim(2)});
      Tensor<R> cv = reshape(slice(batch.view_colors, 0, v, 1), {B, 3});
      Tensor<R> mv = reshape(slice(batch.view_valid, 0, v, 1), {B, 1});
      Tensor<R> tok = view_embed_(concat<R>({fv, cv, mv}, 1));
      tokens.push_back(reshape(tok, {B, 1, cfg_.d_agg}));
    }
    tokens.push_back(reshape(vol_embed_(batch.vol_feat), {B, 1, cfg_.d_agg}));
    tokens.push_back(reshape(sim_embed_(batch.sim_feat), {B, 1, cfg_.d_agg}));
    Tensor<R> x = concat(tokens, 1);  // (B, N+3, d)
    for (const auto& block : agg_blocks_) x = block.self(x);

    Tensor<R> f_p = reshape(slice(x, 1, 0, 1), {B, cfg_.d_agg});
    Tensor<R> view_tokens = slice(x, 1, 1, N);  // (B, N, d)
    Tensor<R> logits = reshape(blend_head_(view_tokens), {B, N});
    // masked softmax over views
    Tensor<R> shift({B, N});
    Tensor<R> any({B, 1});
    for (std::int64_t b = 0; b < B; ++b) {
      R a = 0;
      for (std::int64_t v = 0; v < N; ++v) {
        const R m = batch.view_valid[v * B + b];
        shift[b * N + v] = (m - R(1)) * R(1e9);
        a = std::max(a, m);
      }
      any[b] = a;
    }
    Tensor<R> weights = mul(softmax(add(logits, shift), 1), any);
    return {f_p, weights};
  }

  // Geometry-aware ray transformer: sinusoidal encoding of (z - z_d) joins
  // the fused feature, then self-attention along each ray.
  Tensor<R> ray_transform(const Tensor<R>& f_p, const SampleBatch<R>& batch) const {
    const std::int64_t B = f_p.dim(0), M = batch.samples_per_ray;
    std::vector<double> dz(static_cast<std::size_t>(B));
    for (std::int64_t i = 0; i < B; ++i)
      dz[static_cast<std::size_t>(i)] = batch.z_vals[static_cast<std::size_t>(i)] -
                                        batch.z_prior[static_cast<std::size_t>(i / M)];
    Tensor<R> pe = ray_positional_encoding<R>(dz, cfg_.pe_octaves, pe_base_freq_);
    Tensor<R> x = ray_embed_(concat<R>({f_p, pe}, 1));
    x = reshape(x, {B / M, M, cfg_.d_ray});
    for (const auto& block : ray_blocks_) x = block.self(x);
    return reshape(x, {B, cfg_.d_ray});
  }

  // SDF head + discrete opacity: alpha_m = max((phi(sdf_m) - phi(sdf_{m+1}))
  // / phi(sdf_m), 0) with phi the sigmoid sharpened by s; the last sample
  // gets alpha 0.
  struct SdfAlpha {
    Tensor<R> sdf;    // (R, M)
    Tensor<R> alpha;  // (R, M)
  };

  Tensor<R> predict_sdf(const Tensor<R>& geom, std::int64_t rays, std::int64_t M) const {
    return reshape(sdf_out_(relu(sdf_hidden_(geom))), {rays, M});
  }

  SdfAlpha alpha_from_sdf(const Tensor<R>& sdf, std::optional<R> fixed_sharpness = {}) const {
    const std::int64_t rays = sdf.dim(0), M = sdf.dim(1);
    if (M < 2) throw std::invalid_argument("alpha_from_sdf: need at least 2 samples per ray");
    Tensor<R> s = fixed_sharpness ? Tensor<R>::scalar(*fixed_sharpness)
                                  : exp_t(log_sharpness_->value);
    Tensor<R> phi = sigmoid(mul(sdf, s));
    Tensor<R> cur = slice(phi, 1, 0, M - 1);
    Tensor<R> nxt = slice(phi, 1, 1, M - 1);
    Tensor<R> alpha = relu(div(sub(cur, nxt), add_scalar(cur, R(1e-12))));
    return {sdf, concat<R>({alpha, Tensor<R>::zeros({rays, 1})}, 1)};
  }

  // Blended color per sample and alpha compositing along the ray.
  RenderOutput<R> composite(const SampleBatch<R>& batch, const Tensor<R>& alpha,
                            const Tensor<R>& blend_weights, const Tensor<R>& sdf) const {
    const std::int64_t N = batch.view_colors.dim(0);
    const std::int64_t B = batch.view_colors.dim(1);
    const std::int64_t M = batch.samples_per_ray;
    const std::int64_t rays = batch.num_rays;

    // per-sample color: convex combination of projected source pixels
    Tensor<R> colors = permute(batch.view_colors, {1, 0, 2});          // (B, N, 3)
    Tensor<R> c = sum(mul(colors, reshape(blend_weights, {B, N, 1})), {1});  // (B, 3)

    // transmittance T_m = prod_{k<m} (1 - alpha_k)
    Tensor<R> one_minus = add_scalar(neg(alpha), R(1));  // (rays, M)
    std::vector<Tensor<R>> trans;
    trans.push_back(Tensor<R>::ones({rays, 1}));
    Tensor<R> running = trans[0];
    for (std::int64_t m = 1; m < M; ++m) {
      running = mul(running, slice(one_minus, 1, m - 1, 1));
      trans.push_back(running);
    }
    Tensor<R> T = concat(trans, 1);          // (rays, M)
    Tensor<R> w = mul(T, alpha);             // (rays, M)

    Tensor<R> color = sum(reshape(mul(reshape(w, {rays * M, 1}), c), {rays, M, 3}), {1});
    Tensor<R> t_const({rays, M});
    for (std::int64_t i = 0; i < rays * M; ++i)
      t_const[i] = static_cast<R>(batch.ts[static_cast<std::size_t>(i)]);
    Tensor<R> opacity = sum(w, {1}, true);                      // (rays, 1)
    Tensor<R> residual = add_scalar(neg(opacity), R(1));        // 1 - sum w
    Tensor<R> tfar({rays, 1});
    for (std::int64_t r = 0; r < rays; ++r)
      tfar[r] = static_cast<R>(batch.rays.t_far[static_cast<std::size_t>(r)]);
    Tensor<R> depth_t = add(sum(mul(w, t_const), {1}, true), mul(residual, tfar));

    RenderOutput<R> out;
    out.color = color;
    out.depth_t = depth_t;
    out.weights = w;
    out.sdf = sdf;
    out.opacity = opacity;
    out.ray_valid = Tensor<R>({rays});
    for (std::int64_t r = 0; r < rays; ++r) {
      R any = 0;
      for (std::int64_t m = 0; m < M; ++m)
        for (std::int64_t v = 0; v < N; ++v)
          any = std::max(any, batch.view_valid[v * B + r * M + m]);
      out.ray_valid[r] = any;
    }
    Tensor<R> dz({rays, 1});
    for (std::int64_t r = 0; r < rays; ++r)
      dz[r] = static_cast<R>(batch.rays.dz[static_cast<std::size_t>(r)]);
    out.depth_z = mul(depth_t, dz);
    return out;
  }

  const ModelConfig& config() const { return cfg_; }
  double pe_base_freq() const { return pe_base_freq_; }

 private:
  ModelConfig cfg_;
  Linear<R> view_embed_, vol_embed_, sim_embed_, blend_head_, ray_embed_, sdf_hidden_, sdf_out_;
  std::shared_ptr<Parameter<R>> f0_, log_sharpness_;
  std::vector<TransformerBlock<R>> agg_blocks_, ray_blocks_;
  double pe_base_freq_ = 1.0;
};

}  // namespace mvsurf
