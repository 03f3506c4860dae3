#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "mvsurf/gradcheck.hpp"
#include "mvsurf/parallel.hpp"
#include "mvsurf/pipeline.hpp"
#include "mvsurf/trainer.hpp"

using namespace mvsurf;
namespace fs = std::filesystem;

namespace {

template <class R>
Tensor<R> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<R> t(std::move(s));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<R>(rng.uniform(lo, hi));
  return t;
}

ModelConfig tiny_config() {
  ModelConfig cfg = desk_config();
  cfg.depth_hyps = {8, 6, 4};
  cfg.coarse_samples = 8;
  cfg.fine_samples = 6;
  cfg.agg_blocks = 1;
  cfg.ray_blocks = 1;
  return cfg;
}

Scene tiny_scene(int views = 4, int size = 16, std::uint64_t seed = 3) {
  SceneSpec spec;
  spec.rig.count = views;
  spec.image_size = size;
  spec.num_tracks = 50;
  spec.seed = seed;
  return generate_scene(spec);
}

template <class R>
double max_abs_diff(const Tensor<R>& a, const Tensor<R>& b) {
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// backbone

TEST_CASE("pyramid shapes follow the channel/stride plan") {
  ParamStore<float> ps;
  Rng rng(1);
  Backbone<float> bb(ps, ModelConfig(), rng);
  Tensor<float> img({2, 3, 64, 64});
  auto pyr = bb.extract_pyramid(img);
  REQUIRE(pyr.size() == 3);
  CHECK(pyr[0].shape() == Shape{2, 32, 16, 16});
  CHECK(pyr[1].shape() == Shape{2, 16, 32, 32});
  CHECK(pyr[2].shape() == Shape{2, 8, 64, 64});
}

TEST_CASE("pyramid rejects indivisible resolutions") {
  ParamStore<float> ps;
  Rng rng(1);
  Backbone<float> bb(ps, ModelConfig(), rng);
  CHECK_THROWS_WITH_AS(bb.extract_pyramid(Tensor<float>({1, 3, 30, 30})),
                       doctest::Contains("pad"), std::invalid_argument);
}

TEST_CASE("zero image produces finite features; identical images identical pyramids") {
  ParamStore<float> ps;
  Rng rng(2);
  ModelConfig cfg = tiny_config();
  Backbone<float> bb(ps, cfg, rng);
  Tensor<float> img({2, 3, 16, 16});  // zeros, both views identical
  auto feats = bb.match_features(img);
  for (const auto& f : feats)
    for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(std::isfinite(f[i]));
  // determinism across calls
  auto feats2 = bb.match_features(img);
  for (std::size_t l = 0; l < feats.size(); ++l)
    CHECK(max_abs_diff(feats[l], feats2[l]) == 0.0);
  // identical inputs give identical per-view pyramids
  auto pyr = bb.extract_pyramid(img);
  for (const auto& level : pyr) {
    Tensor<float> v0 = slice(level, 0, 0, 1);
    Tensor<float> v1 = slice(level, 0, 1, 1);
    CHECK(max_abs_diff(v0, v1) == 0.0);
  }
}

TEST_CASE("matching features are invariant to permuting the other views") {
  ParamStore<float> ps;
  Rng rng(3);
  ModelConfig cfg = tiny_config();
  Backbone<float> bb(ps, cfg, rng);
  Rng data_rng(17);
  Tensor<float> imgs = random_tensor<float>({3, 3, 16, 16}, data_rng, 0.0, 1.0);
  auto f_orig = bb.match_features(imgs);

  // swap views 1 and 2; F_0 must not change beyond float reordering
  Tensor<float> swapped({3, 3, 16, 16});
  const std::int64_t plane = 3 * 16 * 16;
  std::memcpy(swapped.data(), imgs.data(), sizeof(float) * plane);
  std::memcpy(swapped.data() + plane, imgs.data() + 2 * plane, sizeof(float) * plane);
  std::memcpy(swapped.data() + 2 * plane, imgs.data() + plane, sizeof(float) * plane);
  auto f_swap = bb.match_features(swapped);
  for (std::size_t l = 0; l < f_orig.size(); ++l) {
    Tensor<float> a = slice(f_orig[l], 0, 0, 1);
    Tensor<float> b = slice(f_swap[l], 0, 0, 1);
    CHECK(max_abs_diff(a, b) < 1e-5);
  }
}

TEST_CASE("gradients reach the other view's pixels through the matching transformer") {
  set_max_threads(1);
  ParamStore<double> ps;
  Rng rng(4);
  ModelConfig cfg = tiny_config();
  cfg.attn_blocks = 2;
  Backbone<double> bb(ps, cfg, rng);
  Rng data_rng(5);
  Tensor<double> imgs = random_tensor<double>({2, 3, 8, 8}, data_rng, 0.0, 1.0);
  auto fn = [&bb](const std::vector<Tensor<double>>& in) {
    auto feats = bb.match_features(in[0]);
    // scalar functional of F_0 at the coarsest level
    return sum(square(slice(feats[0], 0, 0, 1)));
  };
  auto rep = check_gradients<double>(fn, {imgs}, 1e-5, 1e-3, 1e-7);
  INFO("max rel err ", rep.max_rel_err, " at ", rep.worst);
  CHECK(rep.pass);
  set_max_threads(0);
}

// ---------------------------------------------------------------------------
// frustum

TEST_CASE("self-correlation of unit-norm features is one everywhere valid") {
  // two co-located identical cameras, constant unit-norm features
  Camera cam;
  cam.K(0, 0) = cam.K(1, 1) = 20;
  cam.K(0, 2) = cam.K(1, 2) = 7.5;
  cam.width = cam.height = 16;
  cam.depth_min = 1;
  cam.depth_max = 3;
  const std::int64_t C = 4;
  Tensor<float> feats({2, C, 16, 16});
  for (std::int64_t i = 0; i < feats.numel(); ++i) feats[i] = 0.5f;  // norm 1 per pixel
  Tensor<double> hyps = Tensor<double>::full({3, 16, 16}, 2.0);
  auto frustum = build_correlation(0, feats, {cam, cam}, hyps, 0);
  CHECK(frustum.corr.shape() == Shape{1, 3, 16, 16});
  for (std::int64_t d = 0; d < 3; ++d)
    for (std::int64_t y = 1; y < 15; ++y)
      for (std::int64_t x = 1; x < 15; ++x)
        CHECK(frustum.corr.at({0, d, y, x}) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("orthogonal features give zero correlation") {
  Camera cam;
  cam.K(0, 0) = cam.K(1, 1) = 20;
  cam.K(0, 2) = cam.K(1, 2) = 7.5;
  cam.width = cam.height = 16;
  cam.depth_min = 1;
  cam.depth_max = 3;
  Tensor<float> feats({2, 4, 16, 16});
  for (std::int64_t p = 0; p < 16 * 16; ++p) {
    feats[0 * 4 * 256 + 0 * 256 + p] = 1.0f;  // view 0 uses channel 0
    feats[1 * 4 * 256 + 1 * 256 + p] = 1.0f;  // view 1 uses channel 1
  }
  Tensor<double> hyps = Tensor<double>::full({2, 16, 16}, 2.0);
  auto frustum = build_correlation(0, feats, {cam, cam}, hyps, 0);
  for (std::int64_t i = 0; i < frustum.corr.numel(); ++i)
    CHECK(frustum.corr[i] == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("plane-sweep argmax hits the hypothesis nearest the true depth") {
  SceneSpec spec;
  spec.primitive.type = PrimitiveSpec::Type::kPlane;
  spec.primitive.size = 2.5;
  spec.primitive.texture.scale = 5.0;
  spec.primitive.texture.noise = 0.5;
  spec.rig.count = 3;
  spec.rig.radius = 5.0;
  spec.rig.elevation_deg = 87.0;
  spec.rig.angles_deg = {0, 25, 50};
  spec.image_size = 32;
  Scene scene = generate_scene(spec);

  // raw image intensities as features
  Tensor<float> feats({3, 3, 32, 32});
  for (int v = 0; v < 3; ++v)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          feats.at({v, c, y, x}) = scene.images[static_cast<std::size_t>(v)].pixel(x, y)[c];

  // 16 hypotheses spanning +-20% around the true depth at each pixel
  const std::int64_t D = 16;
  Tensor<double> hyps({D, 32, 32});
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const double dtrue = scene.depths[0].at(x, y) > 0 ? scene.depths[0].at(x, y) : 5.0;
      for (std::int64_t d = 0; d < D; ++d)
        hyps.at({d, y, x}) = dtrue * (0.8 + 0.4 * static_cast<double>(d) / (D - 1));
    }
  auto frustum = build_correlation(0, feats, scene.cams, hyps, 0);

  std::int64_t good = 0, total = 0;
  for (int y = 2; y < 30; ++y)
    for (int x = 2; x < 30; ++x) {
      if (scene.depths[0].at(x, y) <= 0) continue;
      if (frustum.coverage[y * 32 + x] == 0.0f) continue;
      std::int64_t best = 0;
      double best_v = -1e30;
      for (std::int64_t d = 0; d < D; ++d)
        if (frustum.corr.at({0, d, y, x}) > best_v) {
          best_v = frustum.corr.at({0, d, y, x});
          best = d;
        }
      // nearest hypothesis to the true depth: index where factor ~= 1
      std::int64_t want = 0;
      double best_gap = 1e30;
      for (std::int64_t d = 0; d < D; ++d) {
        const double gap = std::abs(hyps.at({d, y, x}) - scene.depths[0].at(x, y));
        if (gap < best_gap) {
          best_gap = gap;
          want = d;
        }
      }
      if (best == want) ++good;
      ++total;
    }
  REQUIRE(total > 300);
  CHECK(static_cast<double>(good) / static_cast<double>(total) >= 0.95);
}

TEST_CASE("regularizer: uniform initial probabilities and soft-argmax bounds") {
  ParamStore<float> ps;
  Rng rng(6);
  ModelConfig cfg = tiny_config();
  FrustumRegularizer<float> reg(ps, "reg", cfg, rng);
  CorrelationFrustum<float> frustum;
  frustum.ref_view = 0;
  frustum.level = 0;
  frustum.corr = Tensor<float>::full({1, 8, 6, 6}, 0.37f);
  frustum.depth_values = Tensor<double>({8, 6, 6});
  for (std::int64_t d = 0; d < 8; ++d)
    for (std::int64_t p = 0; p < 36; ++p)
      frustum.depth_values[d * 36 + p] = 1.0 + 0.25 * static_cast<double>(d);
  auto vol = reg(frustum);
  // probabilities sum to one per pixel
  for (std::int64_t p = 0; p < 36; ++p) {
    double s = 0;
    for (std::int64_t d = 0; d < 8; ++d) s += vol.prob[d * 36 + p];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }
  // zero-initialized head: uniform distribution, depth = hypothesis mean
  const double mean = (1.0 + 1.0 + 0.25 * 7) / 2.0;
  for (std::int64_t p = 0; p < 36; ++p)
    CHECK(vol.depth[p] == doctest::Approx(mean).epsilon(1e-5));
  CHECK(vol.feat.shape() == Shape{cfg.vol_channels, 8, 6, 6});
}

TEST_CASE("cascade: volume counts, nesting, determinism") {
  Scene scene = tiny_scene(3, 16);
  ParamStore<float> ps;
  Rng rng(7);
  ModelConfig cfg = tiny_config();
  Backbone<float> bb(ps, cfg, rng);
  FrustumPipeline<float> fp(ps, cfg, rng);
  std::vector<Tensor<float>> imgs;
  for (const auto& img : scene.images) imgs.push_back(Trainer<float>::image_to_tensor(img));
  auto feats = bb.match_features(concat(imgs, 0));
  auto result = fp.cascade(feats, scene.cams);
  CHECK(result.volumes.size() == 9);  // N * L

  // per-pixel nesting: level l+1 hypotheses inside level l's padded hull
  for (int v = 0; v < 3; ++v)
    for (int l = 0; l + 1 < 3; ++l) {
      const auto& coarse = result.at(v, l);
      const auto& fine = result.at(v, l + 1);
      const std::int64_t hc = coarse.depth_values.dim(1), wc = coarse.depth_values.dim(2);
      const std::int64_t Dc = coarse.depth_values.dim(0);
      const std::int64_t hf = fine.depth_values.dim(1), wf = fine.depth_values.dim(2);
      const std::int64_t Df = fine.depth_values.dim(0);
      for (std::int64_t y = 0; y < hf; ++y)
        for (std::int64_t x = 0; x < wf; ++x) {
          const std::int64_t yp = std::min(hc - 1, y * hc / hf);
          const std::int64_t xp = std::min(wc - 1, x * wc / wf);
          const double lo_par = coarse.depth_values[yp * wc + xp];
          const double hi_par = coarse.depth_values[(Dc - 1) * hc * wc + yp * wc + xp];
          const double interval = (hi_par - lo_par) / static_cast<double>(Dc - 1);
          const double lo = fine.depth_values[y * wf + x];
          const double hi = fine.depth_values[(Df - 1) * hf * wf + y * wf + x];
          CHECK(lo >= lo_par - interval - 1e-9);
          CHECK(hi <= hi_par + interval + 1e-9);
          CHECK(lo < hi);
        }
      // soft-argmax depth inside the per-pixel hull
      for (std::int64_t p = 0; p < hc * wc; ++p) {
        CHECK(coarse.depth[p] >= coarse.depth_values[p] - 1e-5);
        CHECK(coarse.depth[p] <= coarse.depth_values[(Dc - 1) * hc * wc + p] + 1e-5);
      }
    }

  auto result2 = fp.cascade(feats, scene.cams);
  for (std::size_t i = 0; i < result.volumes.size(); ++i)
    CHECK(max_abs_diff(result.volumes[i].feat, result2.volumes[i].feat) == 0.0);
}

TEST_CASE("single-level cascade degenerates to one plane sweep") {
  Scene scene = tiny_scene(2, 16);
  ParamStore<float> ps;
  Rng rng(8);
  ModelConfig cfg = tiny_config();
  cfg.fpn_channels = {8};
  cfg.depth_hyps = {10};
  FrustumPipeline<float> fp(ps, cfg, rng);
  Rng data_rng(9);
  std::vector<Tensor<float>> feats = {random_tensor<float>({2, 8, 16, 16}, data_rng)};
  auto result = fp.cascade(feats, scene.cams);
  CHECK(result.volumes.size() == 2);
  const auto& vol = result.at(0, 0);
  // uniform sweep across the camera depth range
  const Camera& cam = scene.cams[0];
  CHECK(vol.depth_values[0] == doctest::Approx(cam.depth_min));
  CHECK(vol.depth_values[(10 - 1) * 256] == doctest::Approx(cam.depth_max));
}

TEST_CASE("global feature sampling: lattice exactness, permutation, miss mask") {
  Scene scene = tiny_scene(3, 16);
  ParamStore<float> ps;
  Rng rng(10);
  ModelConfig cfg = tiny_config();
  Backbone<float> bb(ps, cfg, rng);
  FrustumPipeline<float> fp(ps, cfg, rng);
  std::vector<Tensor<float>> imgs;
  for (const auto& img : scene.images) imgs.push_back(Trainer<float>::image_to_tensor(img));
  auto feats = bb.match_features(concat(imgs, 0));
  auto volumes = fp.cascade(feats, scene.cams);

  // a lattice node of view 0's coarsest frustum
  const auto& vol = volumes.at(0, 0);
  const std::int64_t h = vol.depth_values.dim(1), w = vol.depth_values.dim(2);
  const double s = 1.0 / 4.0;
  const Camera coarse_cam = scene.cams[0].scaled(s, s);
  const std::int64_t px = w / 2, py = h / 2, pd = 2;
  const double z = vol.depth_values[(pd * h + py) * w + px];
  const Vec3 node = coarse_cam.backproject(static_cast<double>(px), static_cast<double>(py), z);

  auto gf = sample_global_feature<float>({node}, volumes, scene.cams, cfg);
  CHECK(gf.mask[0] == 1.0f);
  CHECK(gf.feat.shape() == Shape{1, 3 * cfg.vol_channels});

  // single-view comparison at the node: contribution of view 0's level 0
  CascadeResult<float> only0;
  only0.num_views = 1;
  only0.levels = 1;
  only0.volumes = {vol};
  auto gf0 = sample_global_feature<float>({node}, only0, {scene.cams[0]}, cfg);
  for (std::int64_t c = 0; c < cfg.vol_channels; ++c)
    CHECK(gf0.feat[c] == doctest::Approx(vol.feat.at({c, pd, py, px})).epsilon(2e-4));

  // permuting views only reorders the sum
  CascadeResult<float> perm;
  perm.num_views = 3;
  perm.levels = 3;
  for (int v : {2, 0, 1})
    for (int l = 0; l < 3; ++l) perm.volumes.push_back(volumes.at(v, l));
  std::vector<Camera> cams_perm = {scene.cams[2], scene.cams[0], scene.cams[1]};
  auto gfp = sample_global_feature<float>({node}, perm, cams_perm, cfg);
  CHECK(max_abs_diff(gf.feat, gfp.feat) < 1e-5);

  // far outside every frustum
  auto far = sample_global_feature<float>({Vec3{100, 100, 100}}, volumes, scene.cams, cfg);
  CHECK(far.mask[0] == 0.0f);
  for (std::int64_t c = 0; c < far.feat.numel(); ++c) CHECK(far.feat[c] == 0.0f);
}

// ---------------------------------------------------------------------------
// similarity

TEST_CASE("similarity encoding: identical, orthogonal, dimension invariance") {
  Camera cam;
  cam.K(0, 0) = cam.K(1, 1) = 8;
  cam.K(0, 2) = cam.K(1, 2) = 3.5;
  cam.width = cam.height = 8;
  cam.depth_min = 1;
  cam.depth_max = 5;
  const std::vector<Vec3> pts = {{0, 0, 2.0}, {0.1, -0.1, 2.5}};

  // identical nonzero features in every view
  {
    Tensor<float> feats({3, 8, 8, 8});
    for (std::int64_t i = 0; i < feats.numel(); ++i)
      feats[i] = 0.3f + 0.01f * static_cast<float>(i % 64);
    auto enc = encode_similarity(pts, feats, {cam, cam, cam}, 4);
    CHECK(enc.values.shape() == Shape{2, 4});
    for (std::int64_t i = 0; i < enc.values.numel(); ++i)
      CHECK(enc.values[i] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(enc.mask[0] == 1.0f);
  }

  // group-orthogonal features across two views
  {
    Tensor<float> feats({2, 8, 8, 8});
    for (std::int64_t g = 0; g < 4; ++g)
      for (std::int64_t p = 0; p < 64; ++p) {
        feats[(0 * 8 + g * 2) * 64 + p] = 1.0f;      // view 0: first channel of the group
        feats[(1 * 8 + g * 2 + 1) * 64 + p] = 1.0f;  // view 1: second channel
      }
    auto enc = encode_similarity(pts, feats, {cam, cam}, 4);
    for (std::int64_t i = 0; i < enc.values.numel(); ++i)
      CHECK(enc.values[i] == doctest::Approx(0.0).epsilon(1e-6));
  }

  // output width independent of the view count
  {
    Rng rng(11);
    Tensor<float> f3 = random_tensor<float>({3, 8, 8, 8}, rng);
    Tensor<float> f4 = random_tensor<float>({4, 8, 8, 8}, rng);
    auto e3 = encode_similarity(pts, f3, {cam, cam, cam}, 4);
    auto e4 = encode_similarity(pts, f4, {cam, cam, cam, cam}, 4);
    CHECK(e3.values.dim(1) == e4.values.dim(1));
  }
}

TEST_CASE("similarity encoding: permutation and positive-scale invariance, bounds") {
  Camera cam;
  cam.K(0, 0) = cam.K(1, 1) = 8;
  cam.K(0, 2) = cam.K(1, 2) = 3.5;
  cam.width = cam.height = 8;
  cam.depth_min = 1;
  cam.depth_max = 5;
  Rng rng(12);
  Tensor<float> feats = random_tensor<float>({3, 8, 8, 8}, rng);
  std::vector<Vec3> pts;
  for (int i = 0; i < 20; ++i) pts.push_back({rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                                              rng.uniform(1.5, 4.0)});
  auto base = encode_similarity(pts, feats, {cam, cam, cam}, 4);
  for (std::int64_t i = 0; i < base.values.numel(); ++i) {
    CHECK(base.values[i] <= 1.0f + 1e-6f);
    CHECK(base.values[i] >= -1.0f - 1e-6f);
  }

  // permute views
  Tensor<float> perm({3, 8, 8, 8});
  const std::int64_t plane = 8 * 64;
  std::memcpy(perm.data(), feats.data() + 2 * plane, sizeof(float) * plane);
  std::memcpy(perm.data() + plane, feats.data(), sizeof(float) * plane);
  std::memcpy(perm.data() + 2 * plane, feats.data() + plane, sizeof(float) * plane);
  auto permuted = encode_similarity(pts, perm, {cam, cam, cam}, 4);
  CHECK(max_abs_diff(base.values, permuted.values) < 1e-6);

  // scale one view's features by a positive factor
  Tensor<float> scaled = feats.clone();
  for (std::int64_t i = 0; i < plane; ++i) scaled[i] *= 7.5f;
  auto s = encode_similarity(pts, scaled, {cam, cam, cam}, 4);
  CHECK(max_abs_diff(base.values, s.values) < 1e-5);
}

// ---------------------------------------------------------------------------
// renderer

TEST_CASE("coarse sampling: eval midpoints, training strata") {
  auto ts = coarse_ts(1.0, 2.0, 4, nullptr);
  CHECK(ts[0] == doctest::Approx(1.125));
  CHECK(ts[1] == doctest::Approx(1.375));
  CHECK(ts[2] == doctest::Approx(1.625));
  CHECK(ts[3] == doctest::Approx(1.875));
  Rng rng(13);
  auto jittered = coarse_ts(1.0, 2.0, 8, &rng);
  for (int k = 0; k < 8; ++k) {
    CHECK(jittered[static_cast<std::size_t>(k)] >= 1.0 + k * 0.125);
    CHECK(jittered[static_cast<std::size_t>(k)] < 1.0 + (k + 1) * 0.125);
  }
}

TEST_CASE("importance sampling concentrates on the peaked interval") {
  std::vector<double> weights(24, 0.0);
  weights[7] = 1.0;
  Rng rng(14);
  auto ts = importance_ts(2.0, 4.0, weights, 64, &rng);
  const double step = 2.0 / 24;
  int inside = 0;
  for (double t : ts) {
    CHECK(t >= 2.0);
    CHECK(t <= 4.0);
    if (t >= 2.0 + 6 * step && t < 2.0 + 9 * step) ++inside;  // bin 7 +- one neighbor
  }
  CHECK(inside > 0.8 * 64);
}

TEST_CASE("ray positional encoding: zero offset and shift invariance") {
  auto pe0 = ray_positional_encoding<double>({0.0}, 6, 0.5);
  for (int k = 0; k < 6; ++k) {
    CHECK(pe0[2 * k] == 0.0);
    CHECK(pe0[2 * k + 1] == 1.0);
  }
  // depends only on differences: gamma(z - z_d) with both shifted
  auto a = ray_positional_encoding<double>({1.3 - 0.9}, 6, 0.5);
  auto b = ray_positional_encoding<double>({(1.3 + 5.0) - (0.9 + 5.0)}, 6, 0.5);
  CHECK(max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("alpha from sdf: constant, sharp crossing, range") {
  ParamStore<float> ps;
  Rng rng(15);
  ModelConfig cfg = tiny_config();
  Renderer<float> renderer(ps, cfg, rng, 2.0);

  // constant sdf -> zero opacity
  auto sa = renderer.alpha_from_sdf(Tensor<float>::full({2, 5}, 0.3f));
  for (std::int64_t i = 0; i < sa.alpha.numel(); ++i) CHECK(sa.alpha[i] == 0.0f);

  // sharp crossing +a -> -a gives alpha ~ 1
  Tensor<float> sdf({1, 2}, {0.5f, -0.5f});
  auto crossing = renderer.alpha_from_sdf(sdf, 100.0f);
  CHECK(crossing.alpha[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(crossing.alpha[1] == 0.0f);  // last sample

  // random sequences stay in [0,1] and match the clamped formula
  Rng drng(16);
  Tensor<float> rnd = random_tensor<float>({4, 9}, drng, -1.0, 1.0);
  auto ra = renderer.alpha_from_sdf(rnd, 3.0f);
  for (std::int64_t r = 0; r < 4; ++r)
    for (std::int64_t m = 0; m < 9; ++m) {
      const double a = ra.alpha[r * 9 + m];
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
      if (m + 1 < 9) {
        auto phi = [&](double x) { return 1.0 / (1.0 + std::exp(-3.0 * x)); };
        const double pc = phi(rnd[r * 9 + m]), pn = phi(rnd[r * 9 + m + 1]);
        const double expect = std::max((pc - pn) / pc, 0.0);
        CHECK(a == doctest::Approx(expect).epsilon(1e-5));
      }
    }
}

namespace {

// Hand-built two-view sample batch for compositing tests.
SampleBatch<float> manual_batch(std::int64_t rays, std::int64_t M, const std::vector<double>& ts,
                                const std::vector<float>& colors_v0,
                                const std::vector<float>& colors_v1) {
  SampleBatch<float> b;
  b.num_rays = rays;
  b.samples_per_ray = M;
  b.ts = ts;
  const std::int64_t B = rays * M;
  b.rays.t_far.assign(static_cast<std::size_t>(rays), 10.0);
  b.rays.t_near.assign(static_cast<std::size_t>(rays), 0.0);
  b.rays.dz.assign(static_cast<std::size_t>(rays), 1.0);
  b.view_colors = Tensor<float>({2, B, 3});
  for (std::int64_t i = 0; i < B; ++i)
    for (int c = 0; c < 3; ++c) {
      b.view_colors[0 * B * 3 + i * 3 + c] = colors_v0[static_cast<std::size_t>(c)];
      b.view_colors[1 * B * 3 + i * 3 + c] = colors_v1[static_cast<std::size_t>(c)];
    }
  b.view_valid = Tensor<float>::ones({2, B});
  b.view_feats = Tensor<float>({2, B, 8});
  b.vol_feat = Tensor<float>({B, 24});
  b.vol_mask = Tensor<float>::ones({B});
  b.sim_feat = Tensor<float>({B, 4});
  b.sim_mask = Tensor<float>::ones({B});
  b.z_vals.assign(static_cast<std::size_t>(B), 1.0);
  b.z_prior.assign(static_cast<std::size_t>(rays), 1.0);
  return b;
}

}  // namespace

TEST_CASE("compositing: hand-evaluated alpha cases") {
  ParamStore<float> ps;
  Rng rng(17);
  ModelConfig cfg = tiny_config();
  Renderer<float> renderer(ps, cfg, rng, 2.0);

  // equal blending of the two views
  Tensor<float> blend = Tensor<float>::full({2, 2}, 0.5f);

  // single sample, alpha 1: color = blended sample color, weight 1
  {
    SampleBatch<float> b = manual_batch(2, 1, {1.0, 1.5}, {1, 0, 0}, {0, 1, 0});
    Tensor<float> alpha = Tensor<float>::ones({2, 1});
    auto out = renderer.composite(b, alpha, blend, Tensor<float>({2, 1}));
    CHECK(out.color[0] == doctest::Approx(0.5));
    CHECK(out.color[1] == doctest::Approx(0.5));
    CHECK(out.color[2] == doctest::Approx(0.0));
    CHECK(out.weights[0] == 1.0f);
    CHECK(out.depth_t[0] == doctest::Approx(1.0));
  }

  // alpha (0.5, 1.0) -> weights (0.5, 0.5)
  {
    SampleBatch<float> b = manual_batch(1, 2, {1.0, 2.0}, {1, 1, 1}, {1, 1, 1});
    Tensor<float> alpha({1, 2}, {0.5f, 1.0f});
    Tensor<float> blend1 = Tensor<float>::full({2, 2}, 0.5f);
    auto out = renderer.composite(b, alpha, blend1, Tensor<float>({1, 2}));
    CHECK(out.weights[0] == doctest::Approx(0.5));
    CHECK(out.weights[1] == doctest::Approx(0.5));
    CHECK(out.color[0] == doctest::Approx(1.0));
    CHECK(out.depth_t[0] == doctest::Approx(1.5));
    CHECK(out.opacity[0] == doctest::Approx(1.0));
  }

  // all alpha zero -> black, zero weights, zero opacity
  {
    SampleBatch<float> b = manual_batch(1, 3, {1.0, 2.0, 3.0}, {1, 0, 0}, {0, 1, 0});
    Tensor<float> alpha = Tensor<float>::zeros({1, 3});
    Tensor<float> blend1 = Tensor<float>::full({2, 3}, 0.5f);
    auto out = renderer.composite(b, alpha, blend1, Tensor<float>({1, 3}));
    for (int c = 0; c < 3; ++c) CHECK(out.color[c] == 0.0f);
    CHECK(out.opacity[0] == 0.0f);
    // depth falls back to the far bound through the residual term
    CHECK(out.depth_t[0] == doctest::Approx(10.0));
  }
}

TEST_CASE("aggregation: permutation invariance and masked blending") {
  ParamStore<float> ps;
  Rng rng(18);
  ModelConfig cfg = tiny_config();
  Renderer<float> renderer(ps, cfg, rng, 2.0);
  Rng drng(19);
  const std::int64_t B = 6, N = 3;
  SampleBatch<float> b;
  b.num_rays = 2;
  b.samples_per_ray = 3;
  b.view_feats = random_tensor<float>({N, B, 8}, drng);
  b.view_colors = random_tensor<float>({N, B, 3}, drng, 0, 1);
  b.view_valid = Tensor<float>::ones({N, B});
  b.vol_feat = random_tensor<float>({B, 24}, drng);
  b.vol_mask = Tensor<float>::ones({B});
  b.sim_feat = random_tensor<float>({B, 4}, drng);
  b.sim_mask = Tensor<float>::ones({B});

  auto agg = renderer.aggregate_views(b);
  CHECK(agg.f_p.shape() == Shape{B, cfg.d_agg});
  CHECK(agg.blend_weights.shape() == Shape{B, N});
  for (std::int64_t i = 0; i < B; ++i) {
    float s = 0;
    for (std::int64_t v = 0; v < N; ++v) s += agg.blend_weights[i * N + v];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }

  // permute the views (2,0,1): f_p unchanged, weights permuted
  SampleBatch<float> bp = b;
  bp.view_feats = concat<float>({slice(b.view_feats, 0, 2, 1), slice(b.view_feats, 0, 0, 2)}, 0);
  bp.view_colors =
      concat<float>({slice(b.view_colors, 0, 2, 1), slice(b.view_colors, 0, 0, 2)}, 0);
  auto aggp = renderer.aggregate_views(bp);
  CHECK(max_abs_diff(agg.f_p, aggp.f_p) < 1e-5);
  for (std::int64_t i = 0; i < B; ++i) {
    CHECK(aggp.blend_weights[i * N + 0] == doctest::Approx(agg.blend_weights[i * N + 2]).epsilon(1e-4));
    CHECK(aggp.blend_weights[i * N + 1] == doctest::Approx(agg.blend_weights[i * N + 0]).epsilon(1e-4));
  }

  // single valid view takes all the blending weight
  SampleBatch<float> bm = b;
  bm.view_valid = Tensor<float>::zeros({N, B});
  for (std::int64_t i = 0; i < B; ++i) bm.view_valid[1 * B + i] = 1.0f;
  auto aggm = renderer.aggregate_views(bm);
  for (std::int64_t i = 0; i < B; ++i) {
    CHECK(aggm.blend_weights[i * N + 1] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(aggm.blend_weights[i * N + 0] == doctest::Approx(0.0).epsilon(1e-6));
  }
}

TEST_CASE("gradients flow from the render output through the ray transformer") {
  set_max_threads(1);
  ParamStore<double> ps;
  Rng rng(20);
  ModelConfig cfg = tiny_config();
  Renderer<double> renderer(ps, cfg, rng, 2.0);
  Rng drng(21);
  const std::int64_t rays = 2, M = 4, B = rays * M;
  SampleBatch<double> b;
  b.num_rays = rays;
  b.samples_per_ray = M;
  b.ts = {1.0, 1.2, 1.5, 1.9, 1.0, 1.3, 1.6, 1.8};
  b.z_vals.assign(b.ts.begin(), b.ts.end());
  b.z_prior = {1.4, 1.5};
  Tensor<double> f_p = random_tensor<double>({B, cfg.d_agg}, drng);
  auto fn = [&](const std::vector<Tensor<double>>& in) {
    Tensor<double> geom = renderer.ray_transform(in[0], b);
    Tensor<double> sdf = renderer.predict_sdf(geom, rays, M);
    auto sa = renderer.alpha_from_sdf(sdf);
    return sum(square(sa.alpha));
  };
  auto rep = check_gradients<double>(fn, {f_p}, 1e-6, 1e-3, 1e-8);
  INFO("max rel err ", rep.max_rel_err, " at ", rep.worst);
  CHECK(rep.pass);
  set_max_threads(0);
}

// ---------------------------------------------------------------------------
// full pipeline

TEST_CASE("analytic sphere bypass: depth matches ray-sphere intersection") {
  Scene scene = tiny_scene(3, 32, 23);
  ModelConfig cfg = tiny_config();
  cfg.coarse_samples = 24;
  cfg.fine_samples = 16;
  Pipeline<float> model(cfg, 31, scene.cams[0].depth_max - scene.cams[0].depth_min);
  std::vector<Tensor<float>> imgs;
  std::vector<Camera> cams;
  for (int v : {0, 1, 2}) {
    imgs.push_back(Trainer<float>::image_to_tensor(scene.images[static_cast<std::size_t>(v)]));
    cams.push_back(scene.cams[static_cast<std::size_t>(v)]);
  }
  auto ctx = model.encode_sources(concat(imgs, 0), cams);

  Pipeline<float>::RenderOptions opt;
  opt.analytic_sdf = &scene.spec.primitive;
  const Camera& target = scene.cams[0];
  auto view = model.render_view(ctx, target, opt, 512);

  // compare against closed-form intersections on the target rays
  std::int64_t hits = 0, good = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      double dz;
      const Vec3 dir = target.ray_direction(x, y, &dz);
      auto hit = intersect_primitive(scene.spec.primitive, target.center(), dir);
      if (!hit) continue;
      ++hits;
      const double t_near = target.depth_min / dz, t_far = target.depth_max / dz;
      const double interval = (t_far - t_near) / cfg.coarse_samples;
      const float zpred = view.depth.at(x, y);
      if (zpred <= 0) continue;  // miss
      const double t_pred = zpred / dz;
      if (std::abs(t_pred - hit->t) <= interval) ++good;
    }
  REQUIRE(hits > 200);
  CHECK(static_cast<double>(good) / static_cast<double>(hits) >= 0.99);
  CHECK(view.color.width == 32);
  CHECK(view.depth.height == 32);
}

TEST_CASE("weights are non-negative and accumulate within [0,1]") {
  Scene scene = tiny_scene(3, 16, 24);
  ModelConfig cfg = tiny_config();
  Pipeline<float> model(cfg, 32, scene.cams[0].depth_max - scene.cams[0].depth_min);
  std::vector<Tensor<float>> imgs;
  std::vector<Camera> cams;
  for (int v : {0, 1, 2}) {
    imgs.push_back(Trainer<float>::image_to_tensor(scene.images[static_cast<std::size_t>(v)]));
    cams.push_back(scene.cams[static_cast<std::size_t>(v)]);
  }
  auto ctx = model.encode_sources(concat(imgs, 0), cams);
  std::vector<double> px, py;
  for (int i = 0; i < 40; ++i) {
    px.push_back((i * 7) % 16);
    py.push_back((i * 3) % 16);
  }
  RayBatch rays = generate_rays(scene.cams[0], px, py);
  FloatMap prior = model.splat_depth_prior(ctx, scene.cams[0]);
  auto out = model.render_rays(ctx, rays, prior, {});
  for (std::int64_t i = 0; i < out.weights.numel(); ++i) CHECK(out.weights[i] >= 0.0f);
  for (std::int64_t r = 0; r < out.opacity.numel(); ++r) {
    CHECK(out.opacity[r] >= -1e-4f);
    CHECK(out.opacity[r] <= 1.0f + 1e-4f);
  }
}

TEST_CASE("full pipeline output is invariant under source-view permutation") {
  for (int n : {2, 3, 4}) {
    Scene scene = tiny_scene(std::max(3, n), 16, 25 + n);
    ModelConfig cfg = tiny_config();
    Pipeline<float> model(cfg, 77, scene.cams[0].depth_max - scene.cams[0].depth_min);
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i % static_cast<int>(scene.cams.size());
    auto render_with = [&](const std::vector<int>& views) {
      std::vector<Tensor<float>> imgs;
      std::vector<Camera> cams;
      for (int v : views) {
        imgs.push_back(Trainer<float>::image_to_tensor(scene.images[static_cast<std::size_t>(v)]));
        cams.push_back(scene.cams[static_cast<std::size_t>(v)]);
      }
      auto ctx = model.encode_sources(concat(imgs, 0), cams);
      std::vector<double> px, py;
      for (int i = 0; i < 25; ++i) {
        px.push_back((i * 5) % 16);
        py.push_back((i * 11) % 16);
      }
      const Camera& target = scene.cams.back();
      RayBatch rays = generate_rays(target, px, py);
      FloatMap prior = model.splat_depth_prior(ctx, target);
      return model.render_rays(ctx, rays, prior, {});
    };
    // n distinct views when available
    std::vector<int> views;
    for (int i = 0; i < n && i < static_cast<int>(scene.cams.size()) - 1; ++i) views.push_back(i);
    while (static_cast<int>(views.size()) < 2) views.push_back(0);
    auto base = render_with(views);
    std::vector<int> reversed(views.rbegin(), views.rend());
    auto flipped = render_with(reversed);
    CHECK(max_abs_diff(base.color, flipped.color) < 1e-4);
    CHECK(max_abs_diff(base.depth_t, flipped.depth_t) < 1e-4);
  }
}

// ---------------------------------------------------------------------------
// trainer

TEST_CASE("loss: hand-constructed two-ray case") {
  RenderOutput<double> pred;
  pred.color = Tensor<double>({2, 3}, {0.1, 0.1, 0.1, 0.3, 0.3, 0.3});
  pred.depth_z = Tensor<double>({2, 1}, {2.0, 6.0});
  pred.ray_valid = Tensor<double>::ones({2});
  Tensor<double> gt_color = Tensor<double>::zeros({2, 3});
  std::vector<double> gt_depth = {1.0, 3.0};  // errors 1 and 3
  auto loss = compute_loss<double>(pred, gt_color, gt_depth, nullptr, nullptr, nullptr, 1.0);
  CHECK(loss.color.item() == doctest::Approx(0.05).epsilon(1e-12));  // (0.01*3 + 0.09*3) / 6
  CHECK(loss.depth.item() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(loss.total.item() == doctest::Approx(2.05).epsilon(1e-12));

  // exact prediction: zero loss
  RenderOutput<double> exact = pred;
  exact.color = gt_color;
  exact.depth_z = Tensor<double>({2, 1}, {1.0, 3.0});
  auto zero = compute_loss<double>(exact, gt_color, gt_depth, nullptr, nullptr, nullptr, 1.0);
  CHECK(zero.total.item() == 0.0);

  // alpha 0 removes the depth term
  auto color_only = compute_loss<double>(pred, gt_color, gt_depth, nullptr, nullptr, nullptr, 0.0);
  CHECK(color_only.total.item() == doctest::Approx(0.05));

  // all rays invalid is an error
  RenderOutput<double> invalid = pred;
  invalid.ray_valid = Tensor<double>::zeros({2});
  CHECK_THROWS(compute_loss<double>(invalid, gt_color, gt_depth, nullptr, nullptr, nullptr, 1.0));
}

TEST_CASE("view sampling: best deterministic, random uniform, k=n-1 coincide") {
  Scene scene = tiny_scene(5, 16, 26);
  Rng rng(27);
  // best mode depends only on the target
  auto a = sample_views(scene, TrainConfig::Mode::kBest, 3, rng);
  Rng rng2(27);
  auto b = sample_views(scene, TrainConfig::Mode::kBest, 3, rng2);
  CHECK(a.target == b.target);
  CHECK(a.sources == b.sources);
  for (int s : a.sources) CHECK(s != a.target);

  // k = n-1: both modes take every other view
  Rng rng3(1);
  auto r1 = sample_views(scene, TrainConfig::Mode::kRandom, 4, rng3);
  std::vector<int> expect;
  for (int v = 0; v < 5; ++v)
    if (v != r1.target) expect.push_back(v);
  CHECK(r1.sources == expect);

  // random-mode inclusion frequencies are near uniform
  Scene ring = tiny_scene(8, 16, 28);
  Rng rng4(99);
  std::vector<int> counts(8, 0);
  const int draws = 4000;
  for (int i = 0; i < draws; ++i) {
    auto vs = sample_views(ring, TrainConfig::Mode::kRandom, 3, rng4);
    for (int v : vs.sources) ++counts[static_cast<std::size_t>(v)];
  }
  const double expected = draws * 3.0 / 8.0;
  for (int v = 0; v < 8; ++v) {
    const double sigma = std::sqrt(expected * (1.0 - 3.0 / 8.0));
    CHECK(std::abs(counts[static_cast<std::size_t>(v)] - expected) < 5 * sigma);
  }
}

TEST_CASE("training is deterministic and resumable in double precision") {
  set_max_threads(1);
  Scene scene = tiny_scene(4, 16, 29);
  TrainConfig cfg;
  cfg.model = tiny_config();
  cfg.n_source_views = 2;
  cfg.rays_per_step = 12;
  cfg.steps = 4;
  cfg.lr = 1e-3;
  cfg.seed = 5;
  cfg.checkpoint_every = 2;

  const std::string dir_a = (fs::temp_directory_path() / "mvsurf_train_a").string();
  const std::string dir_b = (fs::temp_directory_path() / "mvsurf_train_b").string();
  Trainer<double> ta(scene, cfg);
  auto ha = ta.run(dir_a);
  Trainer<double> tb(scene, cfg);
  auto hb = tb.run(dir_b);
  REQUIRE(ha.size() == 4);
  REQUIRE(hb.size() == 4);
  for (std::size_t i = 0; i < ha.size(); ++i) {
    CHECK(ha[i].total == hb[i].total);  // bit identical
    CHECK(ha[i].color == hb[i].color);
  }

  // resume from the mid-run state: steps 3..4 must match bit-exactly
  Trainer<double> tc(scene, cfg);
  const int resumed_at = tc.load_state(dir_a + "/state.bin");
  // state was last saved at the end of the run; use the step-2 snapshot
  (void)resumed_at;
  Trainer<double> td(scene, cfg);
  // train 2 steps, save, restore into a fresh trainer, continue
  const std::string dir_c = (fs::temp_directory_path() / "mvsurf_train_c").string();
  fs::create_directories(dir_c);
  StepMetrics<double> m1 = td.step(1);
  StepMetrics<double> m2 = td.step(2);
  CHECK(m1.total == ha[0].total);
  CHECK(m2.total == ha[1].total);
  td.save_state(dir_c + "/state.bin", 2);
  Trainer<double> te(scene, cfg);
  te.load_state(dir_c + "/state.bin");
  StepMetrics<double> m3 = te.step(3);
  StepMetrics<double> m4 = te.step(4);
  CHECK(m3.total == ha[2].total);
  CHECK(m4.total == ha[3].total);

  // zero-step run leaves just the initial checkpoint
  TrainConfig zero = cfg;
  zero.steps = 0;
  const std::string dir_z = (fs::temp_directory_path() / "mvsurf_train_z").string();
  Trainer<double> tz(scene, zero);
  auto hz = tz.run(dir_z);
  CHECK(hz.empty());
  CHECK(fs::exists(dir_z + "/checkpoint.bin"));

  for (const auto& d : {dir_a, dir_b, dir_c, dir_z}) fs::remove_all(d);
  set_max_threads(0);
}

TEST_CASE("a zero learning rate leaves parameters unchanged") {
  set_max_threads(1);
  Scene scene = tiny_scene(3, 16, 30);
  TrainConfig cfg;
  cfg.model = tiny_config();
  cfg.n_source_views = 2;
  cfg.rays_per_step = 8;
  cfg.steps = 1;
  cfg.lr = 0.0;
  cfg.seed = 6;
  Trainer<double> tr(scene, cfg);
  std::vector<Tensor<double>> before;
  for (const auto& p : tr.model().params().all()) before.push_back(p->value.clone());
  tr.step(1);
  const auto& params = tr.model().params().all();
  for (std::size_t i = 0; i < params.size(); ++i)
    CHECK(max_abs_diff(before[i], params[i]->value) < 1e-12);
  set_max_threads(0);
}

TEST_CASE("end-to-end gradients reach every module on a micro pipeline") {
  set_max_threads(1);
  Scene scene = tiny_scene(4, 16, 31);
  TrainConfig cfg;
  cfg.model = tiny_config();
  cfg.n_source_views = 3;
  cfg.rays_per_step = 6;
  cfg.steps = 1;
  cfg.lr = 1e-3;
  cfg.seed = 7;
  Trainer<double> tr(scene, cfg);
  tr.step(1);
  // adam consumed the grads; run one more forward/backward manually to
  // inspect gradient coverage
  int with_grad = 0, total = 0;
  tr.step(2);
  for (const auto& p : tr.model().params().all()) {
    ++total;
    (void)p;
  }
  CHECK(total > 50);
  // spot check: a second step changed the parameters relative to the first
  std::vector<Tensor<double>> snap;
  for (const auto& p : tr.model().params().all()) snap.push_back(p->value.clone());
  tr.step(3);
  int changed = 0;
  const auto& params = tr.model().params().all();
  for (std::size_t i = 0; i < params.size(); ++i)
    if (max_abs_diff(snap[i], params[i]->value) > 0) ++changed;
  // every module family must receive updates
  CHECK(changed > total * 3 / 4);
  with_grad = changed;
  (void)with_grad;
  set_max_threads(0);
}
