#pragma once

#include <string>

#include "mvsurf/vec.hpp"

namespace mvsurf {

// Pinhole camera: pixel intrinsics K and a world-to-camera rigid transform
// [R|t]. Integer pixel coordinates address sample centers; the image
// rectangle is [0, width-1] x [0, height-1].
struct Camera {
  Mat3 K = Mat3::identity();
  Mat3 R = Mat3::identity();
  Vec3 t;
  double depth_min = 0.1, depth_max = 10.0;
  int width = 0, height = 0;

  Vec3 center() const { return R.transposed() * (t * -1.0); }

  Vec3 world_to_cam(const Vec3& p) const { return R * p + t; }
  Vec3 cam_to_world(const Vec3& p) const { return R.transposed() * (p - t); }

  // Perspective projection; z is the camera-space depth.
  void project(const Vec3& p, double& u, double& v, double& z) const {
    const Vec3 pc = world_to_cam(p);
    const Vec3 h = K * pc;
    z = pc.z;
    u = h.x / h.z;
    v = h.y / h.z;
  }

  bool pixel_in_bounds(double u, double v) const {
    return u >= 0.0 && u <= width - 1.0 && v >= 0.0 && v <= height - 1.0;
  }

  // World point at camera-space depth z seen through pixel (u, v).
  Vec3 backproject(double u, double v, double z) const {
    const Vec3 d = K.inverse() * Vec3{u, v, 1.0};
    return cam_to_world(d * z);
  }

  // Unit world-space viewing direction through the pixel, plus the cosine
  // factor dz converting ray length t into camera depth z = t * dz.
  Vec3 ray_direction(double u, double v, double* dz = nullptr) const {
    const Vec3 dc = (K.inverse() * Vec3{u, v, 1.0}).normalized();
    if (dz) *dz = dc.z;
    return R.transposed() * dc;
  }

  // Intrinsics rescaled for a feature map of size (width*sx, height*sy),
  // keeping integer coordinates at sample centers.
  Camera scaled(double sx, double sy) const {
    Camera c = *this;
    c.K(0, 0) *= sx;
    c.K(0, 1) *= sx;
    c.K(0, 2) = sx * K(0, 2) + (sx - 1.0) * 0.5;
    c.K(1, 1) *= sy;
    c.K(1, 2) = sy * K(1, 2) + (sy - 1.0) * 0.5;
    c.width = static_cast<int>(std::lround(width * sx));
    c.height = static_cast<int>(std::lround(height * sy));
    return c;
  }

  // Throws std::runtime_error on violated invariants.
  void validate() const;
};

// MVS-style cam.txt: "extrinsic" + 4x4, blank, "intrinsic" + 3x3, blank,
// "depth_min depth_interval depth_num depth_max".
Camera load_camera_file(const std::string& path, int width, int height);
void save_camera_file(const std::string& path, const Camera& cam, int depth_num = 192);

}  // namespace mvsurf
