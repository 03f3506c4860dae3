#pragma once

#include <limits>
#include <memory>
#include <vector>

#include "mvsurf/camera.hpp"
#include "mvsurf/ops.hpp"

namespace mvsurf {

struct ProjectResult {
  std::vector<double> u, v, depth;
  std::vector<std::uint8_t> valid;  // 0 when depth <= 0 or pixel off the image
};

inline ProjectResult project_points(const Camera& cam, const std::vector<Vec3>& points) {
  ProjectResult res;
  const std::size_t m = points.size();
  res.u.resize(m);
  res.v.resize(m);
  res.depth.resize(m);
  res.valid.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    double u, v, z;
    cam.project(points[i], u, v, z);
    res.u[i] = u;
    res.v[i] = v;
    res.depth[i] = z;
    res.valid[i] = (z > 0.0 && cam.pixel_in_bounds(u, v)) ? 1 : 0;
  }
  return res;
}

// Rays through pixel centers of one camera. near/far are ray lengths derived
// from the camera depth bounds via the per-ray cosine factor dz (z = t * dz).
struct RayBatch {
  std::vector<Vec3> origins;
  std::vector<Vec3> directions;  // unit length
  std::vector<double> px, py;
  std::vector<double> t_near, t_far;
  std::vector<double> dz;

  std::size_t size() const { return directions.size(); }
};

inline RayBatch generate_rays(const Camera& cam, const std::vector<double>& px,
                              const std::vector<double>& py) {
  RayBatch rb;
  const Vec3 c = cam.center();
  const std::size_t n = px.size();
  rb.origins.resize(n, c);
  rb.directions.resize(n);
  rb.px = px;
  rb.py = py;
  rb.t_near.resize(n);
  rb.t_far.resize(n);
  rb.dz.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dz;
    rb.directions[i] = cam.ray_direction(px[i], py[i], &dz);
    rb.dz[i] = dz;
    rb.t_near[i] = cam.depth_min / dz;
    rb.t_far[i] = cam.depth_max / dz;
  }
  return rb;
}

// Plane-sweep warp: for every reference pixel and depth hypothesis,
// back-project into the world, project into the source camera and sample its
// feature map. Gradients flow into src_feat through the bilinear sampling;
// the hypothesis depths are treated as constants.
template <class R>
struct WarpResult {
  Tensor<R> feat;   // (D, h*w, C)
  Tensor<R> valid;  // (D, h*w), 0 where the hypothesis lands off-image or behind
};

template <class R>
inline WarpResult<R> homography_warp(const Tensor<R>& src_feat, const Camera& src_cam,
                                     const Camera& ref_cam, const Tensor<double>& depth_hyps) {
  if (src_feat.rank() != 3 || depth_hyps.rank() != 3 || src_feat.dim(1) != depth_hyps.dim(1) ||
      src_feat.dim(2) != depth_hyps.dim(2))
    throw std::invalid_argument("homography_warp: feature map " + shape_str(src_feat.shape()) +
                                " vs hypotheses " + shape_str(depth_hyps.shape()));
  const std::int64_t C = src_feat.dim(0), D = depth_hyps.dim(0), h = depth_hyps.dim(1),
                     w = depth_hyps.dim(2);
  const std::int64_t M = D * h * w;
  auto xs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(M));
  auto ys = std::make_shared<std::vector<double>>(static_cast<std::size_t>(M));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  // Precompute the ref-pixel back-projection directions once per pixel.
  std::vector<Vec3> dirs(static_cast<std::size_t>(h * w));
  const Mat3 kinv = ref_cam.K.inverse();
  const Mat3 rt = ref_cam.R.transposed();
  const Vec3 ref_center = ref_cam.center();
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      dirs[static_cast<std::size_t>(y * w + x)] =
          rt * (kinv * Vec3{static_cast<double>(x), static_cast<double>(y), 1.0});
  parallel_for(D * h * w, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      const std::int64_t p = i % (h * w);
      const Vec3 world = ref_center + dirs[static_cast<std::size_t>(p)] * depth_hyps[i];
      double u, v, z;
      src_cam.project(world, u, v, z);
      const bool ok = z > 0.0;
      (*xs)[static_cast<std::size_t>(i)] = ok ? u : nan;
      (*ys)[static_cast<std::size_t>(i)] = ok ? v : nan;
    }
  }, 4096);
  SampleResult<R> s = bilinear_sample2d(src_feat, xs, ys);
  return {reshape(s.values, {D, h * w, C}), s.mask.view({D, h * w})};
}

}  // namespace mvsurf
