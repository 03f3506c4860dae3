#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mvsurf/camera.hpp"
#include "mvsurf/image_io.hpp"
#include "mvsurf/tracks.hpp"
#include "mvsurf/vcscore.hpp"

namespace mvsurf {

struct TextureSpec {
  enum class Type { kChecker, kNoise };
  Type type = Type::kChecker;
  double scale = 8.0;       // cycles across the primitive
  double noise = 0.25;      // multiplicative value-noise amount in [0,1]
  std::array<float, 3> palette_a = {0.9f, 0.62f, 0.3f};
  std::array<float, 3> palette_b = {0.2f, 0.36f, 0.72f};
};

struct PrimitiveSpec {
  enum class Type { kSphere, kBox, kPlane };
  Type type = Type::kSphere;
  Vec3 center{0, 0, 0};
  double radius = 1.0;          // sphere
  Vec3 half_extents{1, 1, 1};   // box
  Vec3 normal{0, 0, 1};         // plane
  double size = 2.0;            // plane half extent
  TextureSpec texture;

  double bounding_radius() const;
};

struct RigSpec {
  int count = 8;
  double radius = 4.0;
  double elevation_deg = 18.0;
  std::vector<double> angles_deg;  // empty: uniform ring
};

struct SceneSpec {
  PrimitiveSpec primitive;
  RigSpec rig;
  int image_size = 64;
  int num_tracks = 200;
  std::uint64_t seed = 1;

  static SceneSpec from_json_file(const std::string& path);
  void to_json_file(const std::string& path) const;
};

struct Scene {
  SceneSpec spec;
  std::vector<Camera> cams;
  std::vector<Image> images;
  std::vector<FloatMap> depths;  // camera z-depth; 0 marks a miss
  TrackSet tracks;
};

// First-hit query against the analytic primitive.
struct Hit {
  double t = 0;  // ray length
  Vec3 position, normal;
  float albedo[3] = {0, 0, 0};
};

std::optional<Hit> intersect_primitive(const PrimitiveSpec& prim, const Vec3& origin,
                                       const Vec3& dir);

// Signed distance (negative inside); used by the renderer's analytic bypass.
double primitive_sdf(const PrimitiveSpec& prim, const Vec3& p);

// Ray-traces every rig camera with Lambertian shading, producing exact depth
// maps and surface tracks with ray-cast visibility.
Scene generate_scene(const SceneSpec& spec);

// Scene directory: cams/0000_cam.txt, images/0000.ppm, depths/0000.pfm,
// tracks.txt, spec.json.
void save_scene(const std::string& dir, const Scene& scene);
Scene load_scene(const std::string& dir);

// Top- and bottom-ranked k-view combinations by VC score.
struct RigSplit {
  std::vector<int> favorable;
  std::vector<int> unfavorable;
};
RigSplit make_rigs(const Scene& scene, int k, const GaussianParams& g = {});

// ---------------------------------------------------------------------------
// evaluation

struct ViewEval {
  int view = -1;
  double depth_mae = 0;
  double inlier_1pct = 0, inlier_2pct = 0, inlier_5pct = 0;
  double chamfer = 0;
  std::int64_t valid_pixels = 0;
};

struct EvalReport {
  std::vector<ViewEval> per_view;
  double depth_mae = 0;  // over all valid pixels
  double inlier_1pct = 0, inlier_2pct = 0, inlier_5pct = 0;
  double chamfer = 0;  // mean of per-view chamfer distances
};

// Bidirectional brute-force chamfer distance (mean nearest-neighbor both ways).
double chamfer_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

// Compares predicted z-depth maps against ground truth on the GT-valid mask;
// predicted misses (value 0) are excluded. Thresholds are fractions of the
// camera depth range.
EvalReport evaluate_depths(const std::vector<FloatMap>& pred, const std::vector<FloatMap>& gt,
                           const std::vector<Camera>& cams, const std::vector<int>& view_ids);

}  // namespace mvsurf
