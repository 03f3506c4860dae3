#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mvsurf/geometry.hpp"
#include "mvsurf/rng.hpp"
#include "mvsurf/synthlab.hpp"
#include "mvsurf/vcscore.hpp"

using namespace mvsurf;
namespace fs = std::filesystem;

namespace {

Camera simple_camera(int wh = 64, double f = 80.0) {
  Camera cam;
  cam.K(0, 0) = cam.K(1, 1) = f;
  cam.K(0, 2) = (wh - 1) / 2.0;
  cam.K(1, 2) = (wh - 1) / 2.0;
  cam.width = cam.height = wh;
  cam.depth_min = 1.0;
  cam.depth_max = 10.0;
  return cam;
}

Camera rotated_camera(double yaw_deg, const Vec3& pos, int wh = 64, double f = 80.0) {
  Camera cam = simple_camera(wh, f);
  const double a = yaw_deg * M_PI / 180.0;
  // rotation about world y
  cam.R.m = {std::cos(a), 0, -std::sin(a), 0, 1, 0, std::sin(a), 0, std::cos(a)};
  cam.t = (cam.R * pos) * -1.0;
  return cam;
}

}  // namespace

TEST_CASE("project: optical axis point lands on the principal point") {
  Camera cam = simple_camera();
  auto res = project_points(cam, {{0, 0, 3.5}});
  CHECK(res.u[0] == doctest::Approx(cam.K(0, 2)).epsilon(1e-12));
  CHECK(res.v[0] == doctest::Approx(cam.K(1, 2)).epsilon(1e-12));
  CHECK(res.depth[0] == doctest::Approx(3.5));
  CHECK(res.valid[0] == 1);
}

TEST_CASE("project: the camera center itself is invalid") {
  Camera cam = rotated_camera(30.0, {1, 2, 3});
  auto res = project_points(cam, {cam.center()});
  CHECK(res.valid[0] == 0);
}

TEST_CASE("project/backproject round trip") {
  Camera cam = rotated_camera(25.0, {0.4, -0.2, -2.0});
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 5)};
    double u, v, z;
    cam.project(p, u, v, z);
    if (z <= 0) continue;
    const Vec3 back = cam.backproject(u, v, z);
    CHECK((back - p).norm() < 1e-6);
  }
}

TEST_CASE("generate_rays: principal pixel follows the optical axis") {
  Camera cam = rotated_camera(40.0, {1, 0, 0});
  RayBatch rb = generate_rays(cam, {cam.K(0, 2)}, {cam.K(1, 2)});
  const Vec3 axis = cam.R.transposed() * Vec3{0, 0, 1};
  CHECK((rb.directions[0] - axis).norm() < 1e-9);
  CHECK(rb.dz[0] == doctest::Approx(1.0));
  CHECK((rb.origins[0] - cam.center()).norm() < 1e-12);
}

TEST_CASE("generate_rays: projective round trip along the ray") {
  Camera cam = rotated_camera(-35.0, {0.5, 1.0, -1.5});
  std::vector<double> px = {3.0, 17.0, 44.0}, py = {8.0, 30.0, 60.0};
  RayBatch rb = generate_rays(cam, px, py);
  for (std::size_t i = 0; i < rb.size(); ++i) {
    for (double frac : {0.1, 0.5, 0.9}) {
      const double t = rb.t_near[i] + frac * (rb.t_far[i] - rb.t_near[i]);
      const Vec3 p = rb.origins[i] + rb.directions[i] * t;
      double u, v, z;
      cam.project(p, u, v, z);
      CHECK(std::abs(u - px[i]) < 1e-5);
      CHECK(std::abs(v - py[i]) < 1e-5);
      CHECK(z == doctest::Approx(t * rb.dz[i]).epsilon(1e-9));
    }
  }
  // distinct pixels give non-parallel directions
  CHECK(rb.directions[0].cross(rb.directions[1]).norm() > 1e-6);
}

TEST_CASE("homography_warp: identical cameras give the identity warp") {
  Camera cam = simple_camera(16, 20.0);
  Rng rng(5);
  Tensor<float> feat({3, 16, 16});
  for (std::int64_t i = 0; i < feat.numel(); ++i) feat[i] = static_cast<float>(rng.uniform());
  Tensor<double> hyps({2, 16, 16});
  for (std::int64_t i = 0; i < hyps.numel(); ++i) hyps[i] = i < 256 ? 2.0 : 5.0;
  auto warp = homography_warp(feat, cam, cam, hyps);
  for (std::int64_t d = 0; d < 2; ++d)
    for (std::int64_t y = 1; y < 15; ++y)
      for (std::int64_t x = 1; x < 15; ++x) {
        CHECK(warp.valid.at({d, y * 16 + x}) == 1.0f);
        for (std::int64_t c = 0; c < 3; ++c)
          CHECK(warp.feat.at({d, y * 16 + x, c}) ==
                doctest::Approx(feat.at({c, y, x})).epsilon(1e-5));
      }
}

TEST_CASE("homography_warp: rectified stereo shifts by f*b/d") {
  const double f = 40.0, baseline = 0.3, depth = 2.5;
  Camera ref = simple_camera(32, f);
  Camera src = simple_camera(32, f);
  src.t = {-baseline, 0, 0};  // src center at (baseline, 0, 0), pure x translation
  Rng rng(6);
  Tensor<float> feat({1, 32, 32});
  for (std::int64_t i = 0; i < feat.numel(); ++i) feat[i] = static_cast<float>(rng.uniform());
  Tensor<double> hyps = Tensor<double>::full({1, 32, 32}, depth);
  auto warp = homography_warp(feat, src, ref, hyps);
  const double disparity = f * baseline / depth;  // = 4.8 px
  for (std::int64_t y = 0; y < 31; ++y)  // y=31 samples the out-of-bounds corner row
    for (std::int64_t x = 0; x < 32; ++x) {
      const double sx = x - disparity;  // source pixel sampled for ref pixel x
      if (sx < 1 || sx > 30) continue;
      const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
      const double fx = sx - static_cast<double>(x0);
      const double expect = (1 - fx) * feat.at({0, y, x0}) + fx * feat.at({0, y, x0 + 1});
      CHECK(warp.valid.at({0, y * 32 + x}) == 1.0f);
      CHECK(warp.feat.at({0, y * 32 + x, 0}) == doctest::Approx(expect).epsilon(1e-4));
    }
}

TEST_CASE("homography_warp: hypotheses behind the source camera are invalid") {
  Camera ref = simple_camera(8, 10.0);
  Camera src = rotated_camera(180.0, {0, 0, 4.0}, 8, 10.0);  // faces the other way
  Tensor<float> feat({1, 8, 8});
  Tensor<double> hyps = Tensor<double>::full({1, 8, 8}, 8.0);  // behind src
  auto warp = homography_warp(feat, src, ref, hyps);
  for (std::int64_t i = 0; i < 64; ++i) CHECK(warp.valid[i] == 0.0f);
}

TEST_CASE("homography_warp is equivariant under a rigid world transform") {
  Camera ref = rotated_camera(10.0, {0.2, 0.1, -2.0}, 16, 20.0);
  Camera src = rotated_camera(-15.0, {0.8, -0.3, -1.8}, 16, 20.0);
  Rng rng(7);
  Tensor<float> feat({2, 16, 16});
  for (std::int64_t i = 0; i < feat.numel(); ++i) feat[i] = static_cast<float>(rng.uniform());
  Tensor<double> hyps({1, 16, 16});
  for (std::int64_t i = 0; i < 256; ++i) hyps[i] = 2.0 + 0.001 * static_cast<double>(i);
  auto base = homography_warp(feat, src, ref, hyps);

  // apply the same rigid motion to both cameras (world moves, depths fixed)
  const double a = 0.7;
  Mat3 Q;
  Q.m = {std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1};
  const Vec3 shift{0.3, -1.1, 0.5};
  auto move = [&](Camera cam) {
    // new extrinsic: x_cam = R (Q^T (x' - shift)) + t
    cam.R = cam.R * Q.transposed();
    cam.t = cam.t - cam.R * shift;
    return cam;
  };
  auto moved = homography_warp(feat, move(src), move(ref), hyps);
  for (std::int64_t i = 0; i < base.feat.numel(); ++i)
    CHECK(std::abs(base.feat[i] - moved.feat[i]) < 1e-5);
}

TEST_CASE("warp at the true depth reproduces a textured plane's appearance") {
  SceneSpec spec;
  spec.primitive.type = PrimitiveSpec::Type::kPlane;
  spec.primitive.center = {0, 0, 0};
  spec.primitive.normal = {0, 0, 1};
  spec.primitive.size = 3.0;
  spec.primitive.texture.scale = 6.0;
  spec.rig.count = 2;
  spec.rig.radius = 5.0;
  spec.rig.elevation_deg = 88.0;  // nearly top-down, small baseline
  spec.rig.angles_deg = {0.0, 20.0};
  spec.image_size = 48;
  Scene scene = generate_scene(spec);

  const Camera& ref = scene.cams[0];
  const Camera& src = scene.cams[1];
  Tensor<double> hyps({1, 48, 48});
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) {
      const float d = scene.depths[0].at(x, y);
      hyps.at({0, y, x}) = d > 0 ? d : ref.depth_min;
    }
  Tensor<float> src_feat({3, 48, 48});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x) src_feat.at({c, y, x}) = scene.images[1].pixel(x, y)[c];
  auto warp = homography_warp(src_feat, src, ref, hyps);
  double err = 0;
  std::int64_t count = 0;
  for (int y = 4; y < 44; ++y)
    for (int x = 4; x < 44; ++x) {
      if (scene.depths[0].at(x, y) <= 0) continue;
      if (warp.valid.at({0, y * 48 + x}) == 0.0f) continue;
      for (int c = 0; c < 3; ++c) {
        err += std::abs(warp.feat.at({0, y * 48 + x, c}) - scene.images[0].pixel(x, y)[c]);
        ++count;
      }
    }
  REQUIRE(count > 1000);
  CHECK(err / static_cast<double>(count) < 2.0 / 255.0);
}

TEST_CASE("camera file round trip and validation") {
  Camera cam = rotated_camera(33.0, {0.2, 0.5, -1.7});
  const std::string path = (fs::temp_directory_path() / "mvsurf_cam_test.txt").string();
  save_camera_file(path, cam, 128);
  Camera back = load_camera_file(path, cam.width, cam.height);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      CHECK(back.R(i, j) == cam.R(i, j));
      CHECK(back.K(i, j) == cam.K(i, j));
    }
  CHECK(back.t.x == cam.t.x);
  CHECK(back.depth_min == cam.depth_min);
  CHECK(back.depth_max == cam.depth_max);

  // a sheared rotation must be rejected
  Camera bad = cam;
  bad.R(0, 1) += 0.01;
  save_camera_file(path, bad, 128);
  CHECK_THROWS(load_camera_file(path, cam.width, cam.height));
  fs::remove(path);
}

// ---------------------------------------------------------------------------
// view-combination scoring

TEST_CASE("piecewise gaussian: peak, symmetry pair, continuity, monotonicity") {
  GaussianParams g;
  CHECK(piecewise_gaussian(5.0, g) == 1.0);
  CHECK(piecewise_gaussian(4.0, g) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(piecewise_gaussian(15.0, g) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  // continuous at theta0
  CHECK(piecewise_gaussian(5.0 - 1e-9, g) == doctest::Approx(piecewise_gaussian(5.0 + 1e-9, g)));
  // strictly decreasing away from the peak on both sides
  for (double th = 4.5; th > 0.5; th -= 0.5)
    CHECK(piecewise_gaussian(th, g) < piecewise_gaussian(th + 0.5, g));
  for (double th = 5.5; th < 60; th += 0.5)
    CHECK(piecewise_gaussian(th, g) < piecewise_gaussian(th - 0.5, g));
}

TEST_CASE("baseline angle basics") {
  CHECK(baseline_angle_deg({1, 0, 0}, {0, 1, 0}, {0, 0, 0}) == doctest::Approx(90.0));
  CHECK(baseline_angle_deg({2, 0, 0}, {2, 0, 0}, {0, 0, 0}) == doctest::Approx(0.0));
  // symmetric construction at 90 degrees
  CHECK(baseline_angle_deg({1, 1, 0}, {-1, 1, 0}, {0, 0, 0}) == doctest::Approx(90.0));
  CHECK_THROWS(baseline_angle_deg({0, 0, 0}, {1, 0, 0}, {0, 0, 1e-12}));
}

namespace {

// Tiny rig with every camera seeing every track.
struct TestRig {
  std::vector<Camera> cams;
  TrackSet tracks;
};

TestRig random_rig(Rng& rng, int n_cams, int n_tracks) {
  TestRig rig;
  for (int i = 0; i < n_cams; ++i) {
    Camera cam = simple_camera(16, 20.0);
    const double a = rng.uniform(0, 2 * M_PI);
    cam.R.m = {std::cos(a), 0, -std::sin(a), 0, 1, 0, std::sin(a), 0, std::cos(a)};
    const Vec3 pos{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    cam.t = (cam.R * pos) * -1.0;
    rig.cams.push_back(cam);
  }
  for (int i = 0; i < n_tracks; ++i) {
    Track tr;
    tr.position = {rng.uniform(8, 12), rng.uniform(8, 12), rng.uniform(8, 12)};
    for (int v = 0; v < n_cams; ++v)
      if (rng.uniform() < 0.8) tr.views.push_back(v);
    if (tr.views.size() < 2) {
      tr.views = {0, 1};
    }
    rig.tracks.tracks.push_back(tr);
  }
  return rig;
}

}  // namespace

TEST_CASE("pairwise score closed-form values") {
  // two cameras 4 degrees apart seen from a track, then 15 degrees
  GaussianParams g;
  TrackSet ts;
  ts.tracks.push_back({{0, 0, 0}, {0, 1}});
  auto cam_at_angle = [](double deg) {
    Camera cam = simple_camera();
    const double a = deg * M_PI / 180.0;
    const Vec3 pos{std::sin(a) * 5.0, 0, -std::cos(a) * 5.0};
    cam.t = (cam.R * pos) * -1.0;
    return cam;
  };
  {
    std::vector<Camera> cams = {cam_at_angle(0), cam_at_angle(4)};
    CHECK(pairwise_score(0, 1, ts, cams, g) == doctest::Approx(std::exp(-0.5)).epsilon(1e-9));
  }
  {
    std::vector<Camera> cams = {cam_at_angle(0), cam_at_angle(15)};
    CHECK(pairwise_score(0, 1, ts, cams, g) == doctest::Approx(std::exp(-0.5)).epsilon(1e-9));
  }
  // two tracks at 4 and 15 degrees together
  {
    TrackSet two;
    two.tracks.push_back({{0, 0, 0}, {0, 1}});
    two.tracks.push_back({{0, 0, 0}, {0, 1}});
    std::vector<Camera> cams = {cam_at_angle(0), cam_at_angle(4)};
    // emulate the second track at 15 degrees by summing the two setups
    std::vector<Camera> cams15 = {cam_at_angle(0), cam_at_angle(15)};
    const double total =
        pairwise_score(0, 1, ts, cams, g) + pairwise_score(0, 1, ts, cams15, g);
    CHECK(total == doctest::Approx(2 * std::exp(-0.5)).epsilon(1e-9));
    CHECK(total == doctest::Approx(1.2130613194252668).epsilon(1e-9));
  }
  // no common tracks
  TrackSet disjoint;
  disjoint.tracks.push_back({{0, 0, 0}, {0, 2}});
  std::vector<Camera> cams = {cam_at_angle(0), cam_at_angle(4), cam_at_angle(8)};
  CHECK(pairwise_score(0, 1, disjoint, cams, g) == 0.0);
}

TEST_CASE("vc_score: mean of pairwise scores, permutation and scale invariant") {
  Rng rng(11);
  GaussianParams g;
  TestRig rig = random_rig(rng, 4, 30);
  const double p01 = pairwise_score(0, 1, rig.tracks, rig.cams, g);
  const double p02 = pairwise_score(0, 2, rig.tracks, rig.cams, g);
  const double p12 = pairwise_score(1, 2, rig.tracks, rig.cams, g);
  CHECK(vc_score({0, 1, 2}, rig.tracks, rig.cams, g) ==
        doctest::Approx((p01 + p02 + p12) / 3.0).epsilon(1e-15));
  CHECK(vc_score({0, 1, 2}, rig.tracks, rig.cams, g) ==
        vc_score({2, 0, 1}, rig.tracks, rig.cams, g));
  CHECK(vc_score({0, 1}, rig.tracks, rig.cams, g) == doctest::Approx(p01));
  CHECK_THROWS(vc_score({0}, rig.tracks, rig.cams, g));

  // uniform scaling about the origin leaves angles, hence scores, unchanged
  TestRig scaled = rig;
  const double s = 3.7;
  for (auto& cam : scaled.cams) {
    const Vec3 c = cam.center() * s;
    cam.t = (cam.R * c) * -1.0;
  }
  for (auto& tr : scaled.tracks.tracks) tr.position = tr.position * s;
  CHECK(std::abs(vc_score({0, 1, 2, 3}, rig.tracks, rig.cams, g) -
                 vc_score({0, 1, 2, 3}, scaled.tracks, scaled.cams, g)) < 1e-9);
}

TEST_CASE("rank_combinations: counts, groups, oracle ordering") {
  Rng rng(13);
  GaussianParams g;
  TestRig rig = random_rig(rng, 5, 40);
  auto ranking = rank_combinations(5, 3, rig.tracks, rig.cams, g);
  CHECK(ranking.combinations.size() == 10);
  int sizes[3] = {0, 0, 0};
  for (const auto& c : ranking.combinations) sizes[static_cast<int>(c.group)]++;
  CHECK(sizes[0] == 4);
  CHECK(sizes[1] == 3);
  CHECK(sizes[2] == 3);

  // brute-force oracle: recompute every score independently and sort
  for (std::size_t i = 0; i + 1 < ranking.combinations.size(); ++i) {
    const auto& a = ranking.combinations[i];
    const auto& b = ranking.combinations[i + 1];
    const bool ordered = a.score > b.score || (a.score == b.score && a.views < b.views);
    CHECK(ordered);
  }
  for (const auto& c : ranking.combinations) {
    double total = 0;
    for (std::size_t i = 0; i + 1 < c.views.size(); ++i)
      for (std::size_t j = i + 1; j < c.views.size(); ++j)
        total += pairwise_score(c.views[i], c.views[j], rig.tracks, rig.cams, g);
    CHECK(c.score == doctest::Approx(total / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("rank_combinations guards combinatorial explosion") {
  TrackSet ts;
  std::vector<Camera> cams(50, simple_camera());
  CHECK_THROWS_WITH_AS(rank_combinations(50, 25, ts, cams, {}),
                       doctest::Contains("sample"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// synthetic scenes

TEST_CASE("sphere scene ground truth geometry") {
  SceneSpec spec;
  spec.rig.count = 4;
  spec.image_size = 49;  // odd size puts a pixel exactly on the principal point
  spec.num_tracks = 60;
  Scene scene = generate_scene(spec);
  REQUIRE(scene.cams.size() == 4);

  for (const Camera& cam : scene.cams) {
    double u, v, z;
    cam.project(spec.primitive.center, u, v, z);
    CHECK(u == doctest::Approx(cam.K(0, 2)).epsilon(1e-9));
    CHECK(v == doctest::Approx(cam.K(1, 2)).epsilon(1e-9));
  }

  // depth at the silhouette-center pixel is ring radius minus sphere radius
  const int cx = static_cast<int>(std::lround(scene.cams[0].K(0, 2)));
  const int cy = static_cast<int>(std::lround(scene.cams[0].K(1, 2)));
  CHECK(scene.depths[0].at(cx, cy) ==
        doctest::Approx(spec.rig.radius - spec.primitive.radius).epsilon(1e-6));

  // every track reprojects inside every listed view
  for (const Track& tr : scene.tracks.tracks) {
    CHECK(tr.views.size() >= 2);
    for (int v : tr.views) {
      double u, vv, z;
      scene.cams[static_cast<std::size_t>(v)].project(tr.position, u, vv, z);
      CHECK(z > 0);
      CHECK(scene.cams[static_cast<std::size_t>(v)].pixel_in_bounds(u, vv));
    }
  }

  // ray tracer self-consistency: project(backproject(depth)) is the identity
  const Camera& cam = scene.cams[1];
  for (int y = 0; y < 49; y += 5)
    for (int x = 0; x < 49; x += 5) {
      const float d = scene.depths[1].at(x, y);
      if (d <= 0) continue;
      double u, v, z;
      cam.project(cam.backproject(x, y, d), u, v, z);
      CHECK(std::abs(u - x) < 1e-5);
      CHECK(std::abs(v - y) < 1e-5);
    }
}

TEST_CASE("camera inside the primitive is rejected") {
  SceneSpec spec;
  spec.rig.radius = 0.5;  // inside the unit sphere
  CHECK_THROWS(generate_scene(spec));
}

TEST_CASE("make_rigs: adjacency of the favorable triple on a uniform ring") {
  SceneSpec spec;
  spec.rig.count = 8;
  spec.image_size = 32;
  spec.num_tracks = 120;
  Scene scene = generate_scene(spec);
  RigSplit split = make_rigs(scene, 3);
  GaussianParams g;
  CHECK(vc_score(split.favorable, scene.tracks, scene.cams, g) >
        vc_score(split.unfavorable, scene.tracks, scene.cams, g));

  // favorable: consecutive ring indices (circular); unfavorable: no adjacent pair
  auto circular_gap = [&](int a, int b) {
    const int d = std::abs(a - b);
    return std::min(d, 8 - d);
  };
  std::vector<int> f = split.favorable;
  int max_gap_f = 0, min_gap_u = 8;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 1; j < 3; ++j) {
      max_gap_f = std::max(max_gap_f, circular_gap(f[i], f[j]));
      min_gap_u = std::min(min_gap_u, circular_gap(split.unfavorable[i], split.unfavorable[j]));
    }
  CHECK(max_gap_f <= 2);   // angularly adjacent triple
  CHECK(min_gap_u >= 2);   // maximally spread: no neighbors
}

TEST_CASE("chamfer distance: brute-force oracle and symmetry") {
  std::vector<Vec3> a = {{0, 0, 0}, {1, 0, 0}, {0, 2, 0}};
  std::vector<Vec3> b = {{0, 0, 1}, {3, 0, 0}};
  // independent double loop
  auto nn = [](const Vec3& p, const std::vector<Vec3>& cloud) {
    double best = 1e300;
    for (const auto& q : cloud) best = std::min(best, (p - q).norm());
    return best;
  };
  double ab = 0, ba = 0;
  for (const auto& p : a) ab += nn(p, b);
  for (const auto& q : b) ba += nn(q, a);
  const double expect = 0.5 * (ab / 3.0 + ba / 2.0);
  CHECK(chamfer_distance(a, b) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(chamfer_distance(b, a) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("evaluate_depths: exact prediction and constant bias") {
  SceneSpec spec;
  spec.primitive.type = PrimitiveSpec::Type::kPlane;
  spec.primitive.size = 2.5;
  spec.rig.count = 2;
  spec.rig.elevation_deg = 89.0;
  spec.rig.angles_deg = {0, 15};
  spec.image_size = 24;
  Scene scene = generate_scene(spec);

  auto report = evaluate_depths({scene.depths[0]}, {scene.depths[0]}, {scene.cams[0]}, {0});
  CHECK(report.depth_mae == 0.0);
  CHECK(report.chamfer == 0.0);
  CHECK(report.inlier_1pct == 1.0);

  FloatMap biased = scene.depths[0];
  const float delta = 0.01f;
  for (float& v : biased.values)
    if (v > 0) v += delta;
  auto biased_report = evaluate_depths({biased}, {scene.depths[0]}, {scene.cams[0]}, {0});
  CHECK(biased_report.depth_mae == doctest::Approx(delta).epsilon(1e-4));
  // inlier rates are monotone in the threshold
  CHECK(biased_report.inlier_1pct <= biased_report.inlier_2pct);
  CHECK(biased_report.inlier_2pct <= biased_report.inlier_5pct);
}

TEST_CASE("scene save/load round trip") {
  SceneSpec spec;
  spec.rig.count = 3;
  spec.image_size = 24;
  spec.num_tracks = 40;
  Scene scene = generate_scene(spec);
  const std::string dir = (fs::temp_directory_path() / "mvsurf_scene_test").string();
  save_scene(dir, scene);
  Scene back = load_scene(dir);
  REQUIRE(back.cams.size() == 3);
  CHECK(back.tracks.tracks.size() == scene.tracks.tracks.size());
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(back.cams[0].R(i, j) == scene.cams[0].R(i, j));
  // image byte round trip through the PPM quantization
  for (std::size_t i = 0; i < back.images[0].rgb.size(); ++i)
    CHECK(back.images[0].rgb[i] ==
          doctest::Approx(scene.images[0].rgb[i]).epsilon(1.0 / 255.0));
  // depths round trip exactly through PFM
  for (std::size_t i = 0; i < back.depths[0].values.size(); ++i)
    CHECK(back.depths[0].values[i] == scene.depths[0].values[i]);

  // byte-identical second write for PFM and PPM
  const std::string p1 = dir + "/depths/0000.pfm";
  const std::string p2 = dir + "/rewrite.pfm";
  write_pfm(p2, back.depths[0]);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::vector<char> b1((std::istreambuf_iterator<char>(f1)), {});
  std::vector<char> b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);

  const std::string q1 = dir + "/images/0000.ppm";
  const std::string q2 = dir + "/rewrite.ppm";
  write_ppm(q2, back.images[0]);
  std::ifstream g1(q1, std::ios::binary), g2(q2, std::ios::binary);
  std::vector<char> c1((std::istreambuf_iterator<char>(g1)), {});
  std::vector<char> c2((std::istreambuf_iterator<char>(g2)), {});
  CHECK(c1 == c2);

  fs::remove_all(dir);
}

TEST_CASE("track file round trip") {
  TrackSet ts;
  ts.tracks.push_back({{0.125, -3.5, 2.75}, {0, 2, 5}});
  ts.tracks.push_back({{1e-8, 4.0, -7.25}, {1, 3}});
  const std::string path = (fs::temp_directory_path() / "mvsurf_tracks_test.txt").string();
  save_track_file(path, ts);
  TrackSet back = load_track_file(path);
  REQUIRE(back.tracks.size() == 2);
  CHECK(back.tracks[0].position.x == ts.tracks[0].position.x);
  CHECK(back.tracks[1].position.z == ts.tracks[1].position.z);
  CHECK(back.tracks[0].views == ts.tracks[0].views);
  CHECK_THROWS(back.validate(3));  // view id 5 with only 3 cameras
  CHECK_NOTHROW(back.validate(6));
  fs::remove(path);
}
