#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "mvsurf/checkpoint.hpp"
#include "mvsurf/optim.hpp"
#include "mvsurf/pipeline.hpp"

namespace mvsurf {

struct TrainConfig {
  int n_source_views = 4;
  int rays_per_step = 512;
  int steps = 1000;
  double lr = 1e-4;
  double alpha_depth = 1.0;
  enum class Mode { kBest, kRandom } sampling_mode = Mode::kBest;
  std::uint64_t seed = 0;
  int checkpoint_every = 500;
  int log_every = 1;
  ModelConfig model = desk_config();

  static TrainConfig from_json_file(const std::string& path);
};

inline TrainConfig TrainConfig::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("train config: cannot open " + path);
  nlohmann::json j;
  is >> j;
  TrainConfig cfg;
  if (j.value("preset", "desk") == std::string("full")) cfg.model = ModelConfig();
  cfg.n_source_views = j.value("n_source_views", cfg.n_source_views);
  cfg.rays_per_step = j.value("rays_per_step", cfg.rays_per_step);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.alpha_depth = j.value("alpha_depth", cfg.alpha_depth);
  const std::string mode = j.value("sampling_mode", "best");
  if (mode == "best")
    cfg.sampling_mode = Mode::kBest;
  else if (mode == "random")
    cfg.sampling_mode = Mode::kRandom;
  else
    throw std::runtime_error("train config: sampling_mode must be 'best' or 'random'");
  cfg.seed = j.value("seed", cfg.seed);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  if (j.contains("depth_hyps")) cfg.model.depth_hyps = j["depth_hyps"].get<std::vector<int>>();
  cfg.model.coarse_samples = j.value("coarse_samples", cfg.model.coarse_samples);
  cfg.model.fine_samples = j.value("fine_samples", cfg.model.fine_samples);
  cfg.model.cascade_shrink = j.value("cascade_shrink", cfg.model.cascade_shrink);
  if (j.contains("model")) {
    const nlohmann::json& m = j["model"];
    cfg.model.attn_blocks = m.value("attn_blocks", cfg.model.attn_blocks);
    cfg.model.attn_heads = m.value("attn_heads", cfg.model.attn_heads);
    cfg.model.agg_blocks = m.value("agg_blocks", cfg.model.agg_blocks);
    cfg.model.ray_blocks = m.value("ray_blocks", cfg.model.ray_blocks);
    cfg.model.d_agg = m.value("d_agg", cfg.model.d_agg);
    cfg.model.d_ray = m.value("d_ray", cfg.model.d_ray);
    cfg.model.sim_groups = m.value("sim_groups", cfg.model.sim_groups);
    cfg.model.vol_feat_kernel = m.value("vol_feat_kernel", cfg.model.vol_feat_kernel);
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// losses

template <class R>
struct LossTerms {
  Tensor<R> total, color, depth;  // scalars; depth covers ray + frustum terms
};

// Color: mean squared error over valid rays. Depth: mean absolute error over
// rays with valid ground truth, plus the same term on each frustum
// intermediate depth map (level weight 1).
template <class R>
inline LossTerms<R> compute_loss(const RenderOutput<R>& pred, const Tensor<R>& gt_color,
                                 const std::vector<double>& gt_depth,
                                 const CascadeResult<R>* volumes,
                                 const std::vector<std::vector<FloatMap>>* gt_level_depths,
                                 const std::vector<int>* source_ids, double alpha_depth) {
  const std::int64_t rays = pred.color.dim(0);
  Tensor<R> ray_mask({rays, 1});
  std::int64_t valid_rays = 0;
  for (std::int64_t r = 0; r < rays; ++r) {
    ray_mask[r] = pred.ray_valid[r];
    if (pred.ray_valid[r] > 0) ++valid_rays;
  }
  if (valid_rays == 0) throw std::runtime_error("loss: no valid rays in the batch");

  Tensor<R> diff = mul(sub(pred.color, gt_color), ray_mask);
  Tensor<R> color_loss =
      mul_scalar(sum(square(diff)), R(1) / static_cast<R>(3 * valid_rays));

  Tensor<R> depth_mask({rays, 1});
  Tensor<R> gt_z({rays, 1});
  std::int64_t depth_rays = 0;
  for (std::int64_t r = 0; r < rays; ++r) {
    const bool ok = pred.ray_valid[r] > 0 && gt_depth[static_cast<std::size_t>(r)] > 0;
    depth_mask[r] = ok ? R(1) : R(0);
    gt_z[r] = static_cast<R>(gt_depth[static_cast<std::size_t>(r)]);
    if (ok) ++depth_rays;
  }
  Tensor<R> depth_loss = Tensor<R>::scalar(R(0));
  if (depth_rays > 0)
    depth_loss = mul_scalar(sum(abs_t(mul(sub(pred.depth_z, gt_z), depth_mask))),
                            R(1) / static_cast<R>(depth_rays));

  if (volumes && gt_level_depths && source_ids) {
    for (int v = 0; v < volumes->num_views; ++v)
      for (int l = 0; l < volumes->levels; ++l) {
        const RegularizedVolume<R>& vol = volumes->at(v, l);
        const FloatMap& gt =
            (*gt_level_depths)[static_cast<std::size_t>((*source_ids)[static_cast<std::size_t>(v)])]
                              [static_cast<std::size_t>(l)];
        const std::int64_t h = vol.depth.dim(1), w = vol.depth.dim(2);
        Tensor<R> mask({1, h, w}), target({1, h, w});
        std::int64_t count = 0;
        for (std::int64_t p = 0; p < h * w; ++p) {
          const float z = gt.values[static_cast<std::size_t>(p)];
          mask[p] = z > 0 ? R(1) : R(0);
          target[p] = static_cast<R>(z);
          if (z > 0) ++count;
        }
        if (count == 0) continue;
        Tensor<R> term = mul_scalar(sum(abs_t(mul(sub(vol.depth, target), mask))),
                                    R(1) / static_cast<R>(count));
        depth_loss = add(depth_loss, term);
      }
  }

  LossTerms<R> out;
  out.color = color_loss;
  out.depth = depth_loss;
  out.total = add(color_loss, mul_scalar(depth_loss, static_cast<R>(alpha_depth)));
  return out;
}

// Valid-aware 2x depth downsampling (mean of valid quad members).
inline FloatMap downsample_depth_half(const FloatMap& in) {
  FloatMap out;
  out.width = in.width / 2;
  out.height = in.height / 2;
  out.values.assign(static_cast<std::size_t>(out.width) * out.height, 0.0f);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      float sum = 0;
      int n = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const float v = in.at(2 * x + dx, 2 * y + dy);
          if (v > 0) {
            sum += v;
            ++n;
          }
        }
      if (n > 0) out.at(x, y) = sum / static_cast<float>(n);
    }
  return out;
}

// ---------------------------------------------------------------------------
// view sampling

struct ViewSample {
  int target = -1;
  std::vector<int> sources;  // sorted ascending
};

// Target drawn uniformly; sources either the best-scored views against the
// target or a uniform subset of the rest.
inline ViewSample sample_views(const Scene& scene, TrainConfig::Mode mode, int k, Rng& rng,
                               const GaussianParams& g = {}) {
  const int n = static_cast<int>(scene.cams.size());
  if (k >= n) throw std::invalid_argument("sample_views: need more views than sources");
  ViewSample vs;
  vs.target = static_cast<int>(rng.uniform_int(n));
  if (mode == TrainConfig::Mode::kBest) {
    vs.sources = best_sources(vs.target, k, scene.tracks, scene.cams, g);
  } else {
    std::vector<int> pool;
    for (int v = 0; v < n; ++v)
      if (v != vs.target) pool.push_back(v);
    for (int i = 0; i < k; ++i) {
      const std::int64_t j = i + rng.uniform_int(static_cast<std::int64_t>(pool.size()) - i);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    vs.sources.assign(pool.begin(), pool.begin() + k);
    std::sort(vs.sources.begin(), vs.sources.end());
  }
  return vs;
}

// ---------------------------------------------------------------------------
// training loop

template <class R>
struct StepMetrics {
  int step = 0;
  double total = 0, color = 0, depth = 0;
};

template <class R>
class Trainer {
 public:
  Trainer(const Scene& scene, const TrainConfig& cfg)
      : scene_(scene), cfg_(cfg), rng_(cfg.seed) {
    double range = 0;
    for (const Camera& c : scene.cams) range = std::max(range, c.depth_max - c.depth_min);
    model_ = std::make_unique<Pipeline<R>>(cfg.model, cfg.seed ^ 0x9E3779B97F4A7C15ull, range);
    optim_ = std::make_unique<Adam<R>>(static_cast<R>(cfg.lr));
    // per-view image tensors and per-level ground-truth depths, once
    for (std::size_t v = 0; v < scene.images.size(); ++v) {
      view_images_.push_back(image_to_tensor(scene.images[v]));
      std::vector<FloatMap> levels(static_cast<std::size_t>(cfg.model.levels()));
      levels[static_cast<std::size_t>(cfg.model.levels() - 1)] = scene.depths[v];
      for (int l = cfg.model.levels() - 2; l >= 0; --l)
        levels[static_cast<std::size_t>(l)] =
            downsample_depth_half(levels[static_cast<std::size_t>(l) + 1]);
      gt_level_depths_.push_back(std::move(levels));
    }
  }

  Pipeline<R>& model() { return *model_; }
  Rng& rng() { return rng_; }

  // One optimization step; metrics returned for logging.
  StepMetrics<R> step(int step_index) {
    const ViewSample vs =
        sample_views(scene_, cfg_.sampling_mode, cfg_.n_source_views, rng_);
    std::vector<Tensor<R>> imgs;
    std::vector<Camera> cams;
    for (int v : vs.sources) {
      imgs.push_back(view_images_[static_cast<std::size_t>(v)]);
      cams.push_back(scene_.cams[static_cast<std::size_t>(v)]);
    }
    const Camera& target_cam = scene_.cams[static_cast<std::size_t>(vs.target)];

    // ray minibatch from the target view
    const std::int64_t total_px =
        static_cast<std::int64_t>(target_cam.width) * target_cam.height;
    std::vector<double> px(static_cast<std::size_t>(cfg_.rays_per_step));
    std::vector<double> py(static_cast<std::size_t>(cfg_.rays_per_step));
    std::vector<std::int64_t> pix(static_cast<std::size_t>(cfg_.rays_per_step));
    for (int i = 0; i < cfg_.rays_per_step; ++i) {
      const std::int64_t p = rng_.uniform_int(total_px);
      pix[static_cast<std::size_t>(i)] = p;
      px[static_cast<std::size_t>(i)] = static_cast<double>(p % target_cam.width);
      py[static_cast<std::size_t>(i)] = static_cast<double>(p / target_cam.width);
    }

    Graph<R> graph;
    typename Graph<R>::Activate act(graph);
    typename Pipeline<R>::SourceContext ctx = model_->encode_sources(concat(imgs, 0), cams);
    const FloatMap prior = model_->splat_depth_prior(ctx, target_cam);
    RayBatch rays = generate_rays(target_cam, px, py);
    typename Pipeline<R>::RenderOptions opt;
    opt.train = true;
    opt.rng = &rng_;
    RenderOutput<R> out = model_->render_rays(ctx, rays, prior, opt);

    Tensor<R> gt_color({static_cast<std::int64_t>(cfg_.rays_per_step), 3});
    std::vector<double> gt_depth(static_cast<std::size_t>(cfg_.rays_per_step));
    const Image& timg = scene_.images[static_cast<std::size_t>(vs.target)];
    const FloatMap& tdep = scene_.depths[static_cast<std::size_t>(vs.target)];
    for (int i = 0; i < cfg_.rays_per_step; ++i) {
      const std::int64_t p = pix[static_cast<std::size_t>(i)];
      for (int c = 0; c < 3; ++c)
        gt_color[i * 3 + c] = static_cast<R>(timg.rgb[static_cast<std::size_t>(p * 3 + c)]);
      gt_depth[static_cast<std::size_t>(i)] = tdep.values[static_cast<std::size_t>(p)];
    }

    LossTerms<R> loss = compute_loss(out, gt_color, gt_depth, &ctx.volumes, &gt_level_depths_,
                                     &vs.sources, cfg_.alpha_depth);
    StepMetrics<R> metrics;
    metrics.step = step_index;
    metrics.total = static_cast<double>(loss.total.item());
    metrics.color = static_cast<double>(loss.color.item());
    metrics.depth = static_cast<double>(loss.depth.item());
    if (!std::isfinite(metrics.total))
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step_index));
    graph.backward(loss.total);
    optim_->step(model_->params());
    return metrics;
  }

  // Full run: metrics CSV, periodic checkpoints, resumable state.
  std::vector<StepMetrics<R>> run(const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::ofstream csv(fs::path(out_dir) / "metrics.csv");
    csv << "step,total,color,depth\n";
    save_checkpoint(model_->params(), (fs::path(out_dir) / "checkpoint.bin").string());
    std::vector<StepMetrics<R>> history;
    for (int s = 1; s <= cfg_.steps; ++s) {
      StepMetrics<R> m;
      try {
        m = step(s);
      } catch (const std::exception& e) {
        std::cerr << "train: aborting: " << e.what() << " (last checkpoint retained)\n";
        csv.flush();
        return history;
      }
      history.push_back(m);
      if (s % cfg_.log_every == 0)
        csv << m.step << ',' << m.total << ',' << m.color << ',' << m.depth << '\n';
      if (s % cfg_.checkpoint_every == 0 || s == cfg_.steps) {
        save_checkpoint(model_->params(), (fs::path(out_dir) / "checkpoint.bin").string());
        save_state((fs::path(out_dir) / "state.bin").string(), s);
      }
    }
    csv.flush();
    return history;
  }

  // -- full-precision resumable state --------------------------------------

  void save_state(const std::string& path, int step_index) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("state: cannot open " + path + " for writing");
    os.write("UFOS0001", 8);
    const auto& params = model_->params().all();
    const std::uint64_t n = params.size();
    os.write(reinterpret_cast<const char*>(&n), 8);
    auto write_tensor = [&os](const Tensor<R>& t) {
      std::vector<double> buf(static_cast<std::size_t>(t.numel()));
      for (std::int64_t i = 0; i < t.numel(); ++i) buf[static_cast<std::size_t>(i)] = t[i];
      os.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(double)));
    };
    for (const auto& p : params) {
      const std::uint32_t len = static_cast<std::uint32_t>(p->name.size());
      os.write(reinterpret_cast<const char*>(&len), 4);
      os.write(p->name.data(), len);
      const std::uint64_t numel = static_cast<std::uint64_t>(p->value.numel());
      os.write(reinterpret_cast<const char*>(&numel), 8);
      write_tensor(p->value);
      write_tensor(p->m);
      write_tensor(p->v);
    }
    const std::int64_t t = optim_->step_count();
    os.write(reinterpret_cast<const char*>(&t), 8);
    const std::int64_t s = step_index;
    os.write(reinterpret_cast<const char*>(&s), 8);
    std::ostringstream rngs;
    rng_.save(rngs);
    const std::string rstr = rngs.str();
    const std::uint64_t rlen = rstr.size();
    os.write(reinterpret_cast<const char*>(&rlen), 8);
    os.write(rstr.data(), static_cast<std::streamsize>(rlen));
  }

  // Returns the step index the state was saved at.
  int load_state(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("state: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (std::memcmp(magic, "UFOS0001", 8) != 0)
      throw std::runtime_error("state: unknown magic in " + path);
    std::uint64_t n;
    is.read(reinterpret_cast<char*>(&n), 8);
    auto read_tensor = [&is](Tensor<R>& t) {
      std::vector<double> buf(static_cast<std::size_t>(t.numel()));
      is.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(double)));
      for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<R>(buf[static_cast<std::size_t>(i)]);
    };
    for (std::uint64_t k = 0; k < n; ++k) {
      std::uint32_t len;
      is.read(reinterpret_cast<char*>(&len), 4);
      std::string name(len, '\0');
      is.read(name.data(), len);
      std::uint64_t numel;
      is.read(reinterpret_cast<char*>(&numel), 8);
      auto p = model_->params().find(name);
      if (!p || static_cast<std::uint64_t>(p->value.numel()) != numel)
        throw std::runtime_error("state: parameter mismatch for '" + name + "'");
      read_tensor(p->value);
      read_tensor(p->m);
      read_tensor(p->v);
    }
    std::int64_t t, s;
    is.read(reinterpret_cast<char*>(&t), 8);
    is.read(reinterpret_cast<char*>(&s), 8);
    optim_->set_step_count(t);
    std::uint64_t rlen;
    is.read(reinterpret_cast<char*>(&rlen), 8);
    std::string rstr(rlen, '\0');
    is.read(rstr.data(), static_cast<std::streamsize>(rlen));
    std::istringstream rngs(rstr);
    rng_.load(rngs);
    if (!is) throw std::runtime_error("state: truncated " + path);
    return static_cast<int>(s);
  }

  static Tensor<R> image_to_tensor(const Image& img) {
    Tensor<R> t({1, 3, img.height, img.width});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          t[((c * img.height) + y) * img.width + x] =
              static_cast<R>(img.rgb[3 * (static_cast<std::size_t>(y) * img.width + x) +
                                     static_cast<std::size_t>(c)]);
    return t;
  }

 private:
  Scene scene_;
  TrainConfig cfg_;
  Rng rng_;
  std::unique_ptr<Pipeline<R>> model_;
  std::unique_ptr<Adam<R>> optim_;
  std::vector<Tensor<R>> view_images_;
  std::vector<std::vector<FloatMap>> gt_level_depths_;
};

}  // namespace mvsurf
