#include "mvsurf/camera.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace mvsurf {

void Camera::validate() const {
  // R orthonormal with positive determinant
  const Mat3 rrt = R * R.transposed();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double want = i == j ? 1.0 : 0.0;
      if (std::abs(rrt(i, j) - want) > 1e-6)
        throw std::runtime_error("camera: rotation is not orthonormal (R*R^T deviates by " +
                                 std::to_string(std::abs(rrt(i, j) - want)) + ")");
    }
  if (R.det() < 0.0) throw std::runtime_error("camera: rotation determinant is negative");
  if (K(0, 0) <= 0.0 || K(1, 1) <= 0.0)
    throw std::runtime_error("camera: focal lengths must be positive");
  if (std::abs(K(1, 0)) > 1e-12 || std::abs(K(2, 0)) > 1e-12 || std::abs(K(2, 1)) > 1e-12 ||
      std::abs(K(2, 2) - 1.0) > 1e-9)
    throw std::runtime_error("camera: intrinsics must be upper triangular with K[2][2]=1");
  if (!(depth_min > 0.0) || !(depth_min < depth_max))
    throw std::runtime_error("camera: need 0 < depth_min < depth_max, got [" +
                             std::to_string(depth_min) + ", " + std::to_string(depth_max) + "]");
}

Camera load_camera_file(const std::string& path, int width, int height) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("camera: cannot open " + path);
  std::string tok;
  is >> tok;
  if (tok != "extrinsic") throw std::runtime_error("camera: expected 'extrinsic' in " + path);
  double e[16];
  for (double& v : e)
    if (!(is >> v)) throw std::runtime_error("camera: truncated extrinsic in " + path);
  is >> tok;
  if (tok != "intrinsic") throw std::runtime_error("camera: expected 'intrinsic' in " + path);
  double k[9];
  for (double& v : k)
    if (!(is >> v)) throw std::runtime_error("camera: truncated intrinsic in " + path);
  Camera cam;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      cam.R(i, j) = e[i * 4 + j];
      cam.K(i, j) = k[i * 3 + j];
    }
  cam.t = {e[3], e[7], e[11]};
  double interval, num;
  if (!(is >> cam.depth_min >> interval >> num >> cam.depth_max))
    throw std::runtime_error("camera: truncated depth range in " + path);
  cam.width = width;
  cam.height = height;
  cam.validate();
  return cam;
}

void save_camera_file(const std::string& path, const Camera& cam, int depth_num) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("camera: cannot open " + path + " for writing");
  os << std::setprecision(17);
  os << "extrinsic\n";
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) os << cam.R(i, j) << ' ';
    os << (i == 0 ? cam.t.x : i == 1 ? cam.t.y : cam.t.z) << '\n';
  }
  os << "0 0 0 1\n\n";
  os << "intrinsic\n";
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) os << cam.K(i, j) << (j == 2 ? '\n' : ' ');
  }
  const double interval = (cam.depth_max - cam.depth_min) / std::max(1, depth_num - 1);
  os << '\n' << cam.depth_min << ' ' << interval << ' ' << depth_num << ' ' << cam.depth_max
     << '\n';
  if (!os) throw std::runtime_error("camera: short write to " + path);
}

}  // namespace mvsurf
