#pragma once

#include "mvsurf/backbone.hpp"
#include "mvsurf/renderer.hpp"
#include "mvsurf/synthlab.hpp"

namespace mvsurf {

// End-to-end model: matching backbone, cascaded correlation frustums,
// similarity encoding and the rendering transformers, sharing one parameter
// store.
template <class R>
class Pipeline {
 public:
  Pipeline(const ModelConfig& cfg, std::uint64_t seed, double scene_depth_range = 1.0)
      : cfg_(cfg) {
    Rng rng(seed);
    backbone_ = std::make_unique<Backbone<R>>(params_, cfg, rng);
    frustum_ = std::make_unique<FrustumPipeline<R>>(params_, cfg, rng);
    renderer_ = std::make_unique<Renderer<R>>(params_, cfg, rng, scene_depth_range);
  }

  ParamStore<R>& params() { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const Renderer<R>& renderer() const { return *renderer_; }

  // Heavy per-source-set forward pass, reused by every ray batch of a step.
  struct SourceContext {
    Tensor<R> images;                    // (N,3,H,W)
    std::vector<Camera> cams;            // full resolution
    std::vector<Camera> coarse_cams;     // scaled to the coarsest level
    std::vector<Tensor<R>> match_feats;  // per level (N,C_l,h_l,w_l)
    CascadeResult<R> volumes;
  };

  SourceContext encode_sources(const Tensor<R>& images, const std::vector<Camera>& cams) const {
    SourceContext ctx;
    ctx.images = images;
    ctx.cams = cams;
    const double s = 1.0 / static_cast<double>(std::int64_t{1} << (cfg_.levels() - 1));
    for (const Camera& c : cams) ctx.coarse_cams.push_back(c.scaled(s, s));
    ctx.match_feats = backbone_->match_features(images);
    ctx.volumes = frustum_->cascade(ctx.match_feats, cams);
    return ctx;
  }

  // Target-view depth prior: source-view frustum depths splatted into the
  // target grid (z-buffer min). Zero marks a hole.
  FloatMap splat_depth_prior(const SourceContext& ctx, const Camera& target) const {
    FloatMap prior;
    prior.width = target.width;
    prior.height = target.height;
    prior.values.assign(static_cast<std::size_t>(target.width) * target.height, 0.0f);
    for (int v = 0; v < ctx.volumes.num_views; ++v) {
      const Tensor<R>& depth = ctx.volumes.final_depth(v);
      const std::int64_t h = depth.dim(1), w = depth.dim(2);
      const double sx = static_cast<double>(w) / ctx.cams[static_cast<std::size_t>(v)].width;
      const Camera cam = ctx.cams[static_cast<std::size_t>(v)].scaled(sx, sx);
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          const double z = static_cast<double>(depth[y * w + x]);
          const Vec3 world = cam.backproject(static_cast<double>(x), static_cast<double>(y), z);
          double u, vv, zt;
          target.project(world, u, vv, zt);
          if (zt <= 0 || !target.pixel_in_bounds(u, vv)) continue;
          const int px = static_cast<int>(std::lround(u)), py = static_cast<int>(std::lround(vv));
          float& cell = prior.at(px, py);
          if (cell <= 0 || zt < cell) cell = static_cast<float>(zt);
        }
    }
    return prior;
  }

  struct RenderOptions {
    bool train = false;                       // stratified jitter + recording
    Rng* rng = nullptr;                       // required when train
    const PrimitiveSpec* analytic_sdf = nullptr;  // bypass the SDF head
    double bypass_sharpness = 0;              // 0: auto from sample spacing
  };

  RenderOutput<R> render_rays(const SourceContext& ctx, const RayBatch& rays,
                              const FloatMap& depth_prior, const RenderOptions& opt) const {
    const std::int64_t R_ = static_cast<std::int64_t>(rays.size());
    const int coarse = cfg_.coarse_samples, fine = cfg_.fine_samples;
    Rng* rng = opt.train ? opt.rng : nullptr;

    // per-ray prior depth z_d with midpoint fallback
    std::vector<double> z_prior(static_cast<std::size_t>(R_));
    for (std::int64_t r = 0; r < R_; ++r) {
      const int px = static_cast<int>(std::lround(rays.px[static_cast<std::size_t>(r)]));
      const int py = static_cast<int>(std::lround(rays.py[static_cast<std::size_t>(r)]));
      float prior = 0;
      if (px >= 0 && px < depth_prior.width && py >= 0 && py < depth_prior.height)
        prior = depth_prior.at(px, py);
      z_prior[static_cast<std::size_t>(r)] =
          prior > 0 ? prior
                    : 0.5 * (rays.t_near[static_cast<std::size_t>(r)] +
                             rays.t_far[static_cast<std::size_t>(r)]) *
                          rays.dz[static_cast<std::size_t>(r)];
    }

    // coarse pass (no recording) for importance weights
    std::vector<std::vector<double>> merged(static_cast<std::size_t>(R_));
    {
      typename Graph<R>::Pause pause;
      std::vector<double> all_coarse;
      all_coarse.reserve(static_cast<std::size_t>(R_ * coarse));
      for (std::int64_t r = 0; r < R_; ++r) {
        auto ts = coarse_ts(rays.t_near[static_cast<std::size_t>(r)],
                            rays.t_far[static_cast<std::size_t>(r)], coarse, rng);
        all_coarse.insert(all_coarse.end(), ts.begin(), ts.end());
      }
      SampleBatch<R> cb = make_batch(ctx, rays, all_coarse, coarse, z_prior);
      RenderOutput<R> cw = forward_batch(ctx, cb, opt);
      for (std::int64_t r = 0; r < R_; ++r) {
        std::vector<double> bin_w(static_cast<std::size_t>(coarse));
        for (int m = 0; m < coarse; ++m)
          bin_w[static_cast<std::size_t>(m)] =
              static_cast<double>(cw.weights[r * coarse + m]);
        auto fs = importance_ts(rays.t_near[static_cast<std::size_t>(r)],
                                rays.t_far[static_cast<std::size_t>(r)], bin_w, fine, rng);
        auto& m = merged[static_cast<std::size_t>(r)];
        m.assign(all_coarse.begin() + r * coarse, all_coarse.begin() + (r + 1) * coarse);
        m.insert(m.end(), fs.begin(), fs.end());
        std::sort(m.begin(), m.end());
      }
    }

    std::vector<double> all_ts;
    all_ts.reserve(static_cast<std::size_t>(R_ * (coarse + fine)));
    for (auto& m : merged) all_ts.insert(all_ts.end(), m.begin(), m.end());
    SampleBatch<R> batch = make_batch(ctx, rays, all_ts, coarse + fine, z_prior);
    return forward_batch(ctx, batch, opt);
  }

  // Full-frame driver. Rays outside accumulation threshold 0.1 are reported
  // as misses (depth 0) in the returned depth map.
  struct ViewRender {
    Image color;
    FloatMap depth;               // target-camera z units; 0 = miss
    std::vector<std::uint8_t> valid_mask;
  };

  ViewRender render_view(const SourceContext& ctx, const Camera& target,
                         const RenderOptions& opt, std::int64_t rays_per_batch = 2048) const {
    ViewRender out;
    out.color.width = target.width;
    out.color.height = target.height;
    out.color.rgb.assign(static_cast<std::size_t>(target.width) * target.height * 3, 0.0f);
    out.depth.width = target.width;
    out.depth.height = target.height;
    out.depth.values.assign(static_cast<std::size_t>(target.width) * target.height, 0.0f);
    out.valid_mask.assign(static_cast<std::size_t>(target.width) * target.height, 0);
    const FloatMap prior = splat_depth_prior(ctx, target);
    const std::int64_t total = static_cast<std::int64_t>(target.width) * target.height;
    for (std::int64_t start = 0; start < total; start += rays_per_batch) {
      const std::int64_t count = std::min(rays_per_batch, total - start);
      std::vector<double> px(static_cast<std::size_t>(count)), py(static_cast<std::size_t>(count));
      for (std::int64_t i = 0; i < count; ++i) {
        px[static_cast<std::size_t>(i)] = static_cast<double>((start + i) % target.width);
        py[static_cast<std::size_t>(i)] = static_cast<double>((start + i) / target.width);
      }
      RayBatch rays = generate_rays(target, px, py);
      RenderOutput<R> ro = render_rays(ctx, rays, prior, opt);
      for (std::int64_t i = 0; i < count; ++i) {
        const std::int64_t pix = start + i;
        for (int c = 0; c < 3; ++c)
          out.color.rgb[static_cast<std::size_t>(pix * 3 + c)] =
              static_cast<float>(ro.color[i * 3 + c]);
        const bool hit = ro.ray_valid[i] > 0 && static_cast<double>(ro.opacity[i]) >= 0.1;
        out.valid_mask[static_cast<std::size_t>(pix)] = hit ? 255 : 0;
        if (hit)
          out.depth.values[static_cast<std::size_t>(pix)] =
              static_cast<float>(ro.depth_z[i]);
      }
    }
    return out;
  }

  // -- internals shared with the trainer ----------------------------------

  SampleBatch<R> make_batch(const SourceContext& ctx, const RayBatch& rays,
                            const std::vector<double>& ts, std::int64_t samples_per_ray,
                            const std::vector<double>& z_prior) const {
    SampleBatch<R> batch;
    batch.num_rays = static_cast<std::int64_t>(rays.size());
    batch.samples_per_ray = samples_per_ray;
    batch.rays = rays;
    batch.ts = ts;
    batch.z_prior = z_prior;
    const std::int64_t B = batch.num_rays * samples_per_ray;
    batch.positions.resize(static_cast<std::size_t>(B));
    batch.z_vals.resize(static_cast<std::size_t>(B));
    for (std::int64_t i = 0; i < B; ++i) {
      const std::size_t r = static_cast<std::size_t>(i / samples_per_ray);
      batch.positions[static_cast<std::size_t>(i)] =
          rays.origins[r] + rays.directions[r] * ts[static_cast<std::size_t>(i)];
      batch.z_vals[static_cast<std::size_t>(i)] = ts[static_cast<std::size_t>(i)] * rays.dz[r];
    }

    // per-view image features (finest matching level) and colors
    const Tensor<R>& fine_feats = ctx.match_feats.back();
    const std::int64_t N = fine_feats.dim(0), C = fine_feats.dim(1);
    const std::int64_t h = fine_feats.dim(2), w = fine_feats.dim(3);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<Tensor<R>> feats, colors;
    std::vector<Tensor<R>> valids;
    for (std::int64_t v = 0; v < N; ++v) {
      auto xs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B));
      auto ys = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B));
      const Camera& cam = ctx.cams[static_cast<std::size_t>(v)];
      for (std::int64_t i = 0; i < B; ++i) {
        double u, vv, z;
        cam.project(batch.positions[static_cast<std::size_t>(i)], u, vv, z);
        (*xs)[static_cast<std::size_t>(i)] = z > 0 ? u : nan;
        (*ys)[static_cast<std::size_t>(i)] = z > 0 ? vv : nan;
      }
      SampleResult<R> f =
          bilinear_sample2d(reshape(slice(fine_feats, 0, v, 1), {C, h, w}), xs, ys);
      SampleResult<R> col =
          bilinear_sample2d(reshape(slice(ctx.images, 0, v, 1), {3, h, w}), xs, ys);
      feats.push_back(reshape(f.values, {1, B, C}));
      colors.push_back(reshape(col.values, {1, B, 3}));
      valids.push_back(f.mask.view({1, B}));
    }
    batch.view_feats = concat(feats, 0);
    batch.view_colors = concat(colors, 0);
    batch.view_valid = concat(valids, 0);

    GlobalFeatureResult<R> vol =
        sample_global_feature(batch.positions, ctx.volumes, ctx.cams, cfg_);
    batch.vol_feat = vol.feat;
    batch.vol_mask = vol.mask;
    SimilarityEncoding<R> sim = encode_similarity(batch.positions, ctx.match_feats.front(),
                                                  ctx.coarse_cams, cfg_.sim_groups);
    batch.sim_feat = sim.values;
    batch.sim_mask = sim.mask;
    return batch;
  }

  RenderOutput<R> forward_batch(const SourceContext& ctx, const SampleBatch<R>& batch,
                                const RenderOptions& opt) const {
    (void)ctx;
    typename Renderer<R>::Aggregated agg = renderer_->aggregate_views(batch);
    Tensor<R> sdf;
    std::optional<R> fixed_s;
    if (opt.analytic_sdf) {
      sdf = Tensor<R>({batch.num_rays, batch.samples_per_ray});
      for (std::int64_t i = 0; i < sdf.numel(); ++i)
        sdf[i] = static_cast<R>(
            primitive_sdf(*opt.analytic_sdf, batch.positions[static_cast<std::size_t>(i)]));
      double s = opt.bypass_sharpness;
      if (s <= 0) {
        // sharp transition inside one mean sample interval
        const double span = (batch.rays.t_far[0] - batch.rays.t_near[0]) /
                            static_cast<double>(batch.samples_per_ray);
        s = 8.0 / std::max(1e-9, span);
      }
      fixed_s = static_cast<R>(s);
    } else {
      Tensor<R> geom = renderer_->ray_transform(agg.f_p, batch);
      sdf = renderer_->predict_sdf(geom, batch.num_rays, batch.samples_per_ray);
    }
    typename Renderer<R>::SdfAlpha sa = renderer_->alpha_from_sdf(sdf, fixed_s);
    return renderer_->composite(batch, sa.alpha, agg.blend_weights, sa.sdf);
  }

 private:
  ModelConfig cfg_;
  ParamStore<R> params_;
  std::unique_ptr<Backbone<R>> backbone_;
  std::unique_ptr<FrustumPipeline<R>> frustum_;
  std::unique_ptr<Renderer<R>> renderer_;
};

}  // namespace mvsurf
