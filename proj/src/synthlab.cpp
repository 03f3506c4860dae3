#include "mvsurf/synthlab.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mvsurf/parallel.hpp"
#include "mvsurf/rng.hpp"

namespace mvsurf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kAmbient = 0.35;
const Vec3 kLightDir = Vec3{0.35, 0.25, 0.9}.normalized();

// Deterministic value noise on the unit square (hash lattice + bilerp).
double value_noise(double u, double v) {
  auto hash01 = [](std::int64_t x, std::int64_t y) {
    std::uint64_t h = static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ull ^
                      static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4Full;
    h ^= h >> 29;
    h *= 0xBF58476D1CE4E5B9ull;
    h ^= h >> 32;
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  };
  const double xf = std::floor(u), yf = std::floor(v);
  const std::int64_t x0 = static_cast<std::int64_t>(xf), y0 = static_cast<std::int64_t>(yf);
  const double fx = u - xf, fy = v - yf;
  const double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
  const double a = hash01(x0, y0), b = hash01(x0 + 1, y0);
  const double c = hash01(x0, y0 + 1), d = hash01(x0 + 1, y0 + 1);
  return (a * (1 - sx) + b * sx) * (1 - sy) + (c * (1 - sx) + d * sx) * sy;
}

void texture_albedo(const TextureSpec& tex, double u, double v, float rgb[3]) {
  const double su = u * tex.scale, sv = v * tex.scale;
  const std::array<float, 3>* base;
  if (tex.type == TextureSpec::Type::kChecker) {
    const std::int64_t cell = static_cast<std::int64_t>(std::floor(su)) +
                              static_cast<std::int64_t>(std::floor(sv));
    base = ((cell % 2) + 2) % 2 == 0 ? &tex.palette_a : &tex.palette_b;
  } else {
    base = value_noise(su, sv) < 0.5 ? &tex.palette_a : &tex.palette_b;
  }
  const double mod = 1.0 - tex.noise * value_noise(su * 3.7 + 11.0, sv * 3.7 + 5.0);
  for (int c = 0; c < 3; ++c) rgb[c] = static_cast<float>((*base)[static_cast<std::size_t>(c)] * mod);
}

// In-plane axes for the rectangle primitive.
void plane_axes(const Vec3& n, Vec3& u_axis, Vec3& v_axis) {
  const Vec3 up = std::abs(n.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{0, 1, 0};
  u_axis = n.cross(up).normalized();
  v_axis = n.cross(u_axis);
}

}  // namespace

double PrimitiveSpec::bounding_radius() const {
  switch (type) {
    case Type::kSphere: return radius;
    case Type::kBox: return half_extents.norm();
    case Type::kPlane: return size * std::sqrt(2.0);
  }
  return radius;
}

std::optional<Hit> intersect_primitive(const PrimitiveSpec& prim, const Vec3& origin,
                                       const Vec3& dir) {
  Hit hit;
  double u = 0, v = 0;
  switch (prim.type) {
    case PrimitiveSpec::Type::kSphere: {
      const Vec3 oc = origin - prim.center;
      const double b = oc.dot(dir);
      const double c = oc.dot(oc) - prim.radius * prim.radius;
      const double disc = b * b - c;
      if (disc < 0) return std::nullopt;
      double t = -b - std::sqrt(disc);
      if (t < 1e-9) t = -b + std::sqrt(disc);
      if (t < 1e-9) return std::nullopt;
      hit.t = t;
      hit.position = origin + dir * t;
      hit.normal = (hit.position - prim.center).normalized();
      u = 0.5 + std::atan2(hit.normal.y, hit.normal.x) / (2 * M_PI);
      v = std::acos(std::clamp(hit.normal.z, -1.0, 1.0)) / M_PI;
      break;
    }
    case PrimitiveSpec::Type::kBox: {
      double t0 = -std::numeric_limits<double>::infinity();
      double t1 = std::numeric_limits<double>::infinity();
      int axis0 = 0;
      const double o[3] = {origin.x - prim.center.x, origin.y - prim.center.y,
                           origin.z - prim.center.z};
      const double d[3] = {dir.x, dir.y, dir.z};
      const double e[3] = {prim.half_extents.x, prim.half_extents.y, prim.half_extents.z};
      for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-15) {
          if (std::abs(o[a]) > e[a]) return std::nullopt;
          continue;
        }
        double ta = (-e[a] - o[a]) / d[a];
        double tb = (e[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) {
          t0 = ta;
          axis0 = a;
        }
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::nullopt;
      }
      double t = t0;
      if (t < 1e-9) return std::nullopt;  // inside or behind
      hit.t = t;
      hit.position = origin + dir * t;
      const double local[3] = {hit.position.x - prim.center.x, hit.position.y - prim.center.y,
                               hit.position.z - prim.center.z};
      Vec3 n{0, 0, 0};
      if (axis0 == 0) n.x = local[0] > 0 ? 1 : -1;
      if (axis0 == 1) n.y = local[1] > 0 ? 1 : -1;
      if (axis0 == 2) n.z = local[2] > 0 ? 1 : -1;
      hit.normal = n;
      // uv from the two in-face coordinates
      const int ua = axis0 == 0 ? 1 : 0, va = axis0 == 2 ? 1 : 2;
      u = 0.5 + 0.5 * local[ua] / e[ua];
      v = 0.5 + 0.5 * local[va] / e[va];
      break;
    }
    case PrimitiveSpec::Type::kPlane: {
      const Vec3 n = prim.normal.normalized();
      const double denom = dir.dot(n);
      if (std::abs(denom) < 1e-12) return std::nullopt;
      const double t = (prim.center - origin).dot(n) / denom;
      if (t < 1e-9) return std::nullopt;
      hit.t = t;
      hit.position = origin + dir * t;
      Vec3 ua, va;
      plane_axes(n, ua, va);
      const Vec3 local = hit.position - prim.center;
      const double pu = local.dot(ua), pv = local.dot(va);
      if (std::abs(pu) > prim.size || std::abs(pv) > prim.size) return std::nullopt;
      hit.normal = denom < 0 ? n : n * -1.0;
      u = 0.5 + 0.5 * pu / prim.size;
      v = 0.5 + 0.5 * pv / prim.size;
      break;
    }
  }
  texture_albedo(prim.texture, u, v, hit.albedo);
  return hit;
}

double primitive_sdf(const PrimitiveSpec& prim, const Vec3& p) {
  switch (prim.type) {
    case PrimitiveSpec::Type::kSphere:
      return (p - prim.center).norm() - prim.radius;
    case PrimitiveSpec::Type::kBox: {
      const Vec3 q{std::abs(p.x - prim.center.x) - prim.half_extents.x,
                   std::abs(p.y - prim.center.y) - prim.half_extents.y,
                   std::abs(p.z - prim.center.z) - prim.half_extents.z};
      const Vec3 qp{std::max(q.x, 0.0), std::max(q.y, 0.0), std::max(q.z, 0.0)};
      return qp.norm() + std::min(std::max(q.x, std::max(q.y, q.z)), 0.0);
    }
    case PrimitiveSpec::Type::kPlane: {
      const Vec3 n = prim.normal.normalized();
      return (p - prim.center).dot(n);
    }
  }
  return 0;
}

namespace {

Camera make_ring_camera(const SceneSpec& spec, double angle_deg) {
  const PrimitiveSpec& prim = spec.primitive;
  const double a = angle_deg * M_PI / 180.0;
  const double e = spec.rig.elevation_deg * M_PI / 180.0;
  const Vec3 pos = prim.center + Vec3{std::cos(e) * std::cos(a), std::cos(e) * std::sin(a),
                                      std::sin(e)} *
                                     spec.rig.radius;
  const Vec3 fwd = (prim.center - pos).normalized();
  const Vec3 up = std::abs(fwd.z) < 0.999 ? Vec3{0, 0, 1} : Vec3{0, 1, 0};
  const Vec3 xc = fwd.cross(up).normalized();
  const Vec3 yc = fwd.cross(xc);  // right-handed, v grows downward in the world
  Camera cam;
  for (int j = 0; j < 3; ++j) {
    cam.R(0, j) = j == 0 ? xc.x : j == 1 ? xc.y : xc.z;
    cam.R(1, j) = j == 0 ? yc.x : j == 1 ? yc.y : yc.z;
    cam.R(2, j) = j == 0 ? fwd.x : j == 1 ? fwd.y : fwd.z;
  }
  cam.t = (cam.R * pos) * -1.0;
  const int wh = spec.image_size;
  const double rb = prim.bounding_radius();
  const double dist = (pos - prim.center).norm();
  // frame the primitive with ~30% margin
  const double f = wh * dist / (2.6 * rb);
  cam.K = Mat3::identity();
  cam.K(0, 0) = cam.K(1, 1) = f;
  cam.K(0, 2) = (wh - 1.0) / 2.0;
  cam.K(1, 2) = (wh - 1.0) / 2.0;
  cam.width = cam.height = wh;
  cam.depth_min = std::max(0.05 * dist, dist - 1.6 * rb);
  cam.depth_max = dist + 1.6 * rb;
  cam.validate();
  return cam;
}

}  // namespace

Scene generate_scene(const SceneSpec& spec) {
  Scene scene;
  scene.spec = spec;
  std::vector<double> angles = spec.rig.angles_deg;
  if (angles.empty()) {
    for (int i = 0; i < spec.rig.count; ++i) angles.push_back(360.0 * i / spec.rig.count);
  }
  for (double a : angles) scene.cams.push_back(make_ring_camera(spec, a));
  for (const Camera& cam : scene.cams)
    if (primitive_sdf(spec.primitive, cam.center()) <= 0)
      throw std::runtime_error("generate_scene: camera center inside the primitive");

  const int wh = spec.image_size;
  for (const Camera& cam : scene.cams) {
    Image img;
    img.width = img.height = wh;
    img.rgb.assign(static_cast<std::size_t>(wh) * wh * 3, 0.0f);
    FloatMap depth;
    depth.width = depth.height = wh;
    depth.values.assign(static_cast<std::size_t>(wh) * wh, 0.0f);
    const Vec3 origin = cam.center();
    parallel_for(static_cast<std::int64_t>(wh) * wh, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t i = lo; i < hi; ++i) {
        const int x = static_cast<int>(i % wh), y = static_cast<int>(i / wh);
        double dz;
        const Vec3 dir = cam.ray_direction(x, y, &dz);
        const auto hit = intersect_primitive(spec.primitive, origin, dir);
        if (!hit) continue;
        const double lambert = kAmbient + (1.0 - kAmbient) * std::max(0.0, hit->normal.dot(kLightDir));
        float* px = img.pixel(x, y);
        for (int c = 0; c < 3; ++c)
          px[c] = static_cast<float>(std::clamp(hit->albedo[c] * lambert, 0.0, 1.0));
        depth.at(x, y) = static_cast<float>(hit->t * dz);  // camera z-depth
      }
    }, 512);
    scene.images.push_back(std::move(img));
    scene.depths.push_back(std::move(depth));
  }

  // Surface tracks with ray-cast visibility.
  Rng rng(spec.seed);
  const PrimitiveSpec& prim = spec.primitive;
  int guard = 0;
  while (static_cast<int>(scene.tracks.tracks.size()) < spec.num_tracks && guard++ < spec.num_tracks * 50) {
    Vec3 p;
    switch (prim.type) {
      case PrimitiveSpec::Type::kSphere: {
        const double z = rng.uniform(-1.0, 1.0);
        const double phi = rng.uniform(0.0, 2 * M_PI);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        p = prim.center + Vec3{r * std::cos(phi), r * std::sin(phi), z} * prim.radius;
        break;
      }
      case PrimitiveSpec::Type::kBox: {
        // pick a face, uniform in its rectangle
        const int axis = static_cast<int>(rng.uniform_int(3));
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        Vec3 q{rng.uniform(-1.0, 1.0) * prim.half_extents.x,
               rng.uniform(-1.0, 1.0) * prim.half_extents.y,
               rng.uniform(-1.0, 1.0) * prim.half_extents.z};
        if (axis == 0) q.x = sign * prim.half_extents.x;
        if (axis == 1) q.y = sign * prim.half_extents.y;
        if (axis == 2) q.z = sign * prim.half_extents.z;
        p = prim.center + q;
        break;
      }
      case PrimitiveSpec::Type::kPlane: {
        Vec3 ua, va;
        plane_axes(prim.normal.normalized(), ua, va);
        p = prim.center + ua * rng.uniform(-prim.size, prim.size) +
            va * rng.uniform(-prim.size, prim.size);
        break;
      }
    }
    Track tr;
    tr.position = p;
    for (int v = 0; v < static_cast<int>(scene.cams.size()); ++v) {
      const Camera& cam = scene.cams[static_cast<std::size_t>(v)];
      double u, vv, z;
      cam.project(p, u, vv, z);
      if (z <= 0 || !cam.pixel_in_bounds(u, vv)) continue;
      const Vec3 origin = cam.center();
      const Vec3 dir = (p - origin).normalized();
      const auto hit = intersect_primitive(prim, origin, dir);
      if (!hit) continue;
      if (std::abs(hit->t - (p - origin).norm()) > 1e-6 * hit->t) continue;  // occluded
      tr.views.push_back(v);
    }
    if (tr.views.size() >= 2) scene.tracks.tracks.push_back(std::move(tr));
  }
  return scene;
}

void save_scene(const std::string& dir, const Scene& scene) {
  fs::create_directories(fs::path(dir) / "cams");
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "depths");
  char name[32];
  for (std::size_t i = 0; i < scene.cams.size(); ++i) {
    std::snprintf(name, sizeof(name), "%04zu", i);
    save_camera_file((fs::path(dir) / "cams" / (std::string(name) + "_cam.txt")).string(),
                     scene.cams[i]);
    write_ppm((fs::path(dir) / "images" / (std::string(name) + ".ppm")).string(),
              scene.images[i]);
    write_pfm((fs::path(dir) / "depths" / (std::string(name) + ".pfm")).string(),
              scene.depths[i]);
  }
  save_track_file((fs::path(dir) / "tracks.txt").string(), scene.tracks);
  scene.spec.to_json_file((fs::path(dir) / "spec.json").string());
}

Scene load_scene(const std::string& dir) {
  Scene scene;
  scene.spec = SceneSpec::from_json_file((fs::path(dir) / "spec.json").string());
  char name[32];
  for (std::size_t i = 0;; ++i) {
    std::snprintf(name, sizeof(name), "%04zu", i);
    const fs::path cam_path = fs::path(dir) / "cams" / (std::string(name) + "_cam.txt");
    if (!fs::exists(cam_path)) break;
    const Image img = read_ppm((fs::path(dir) / "images" / (std::string(name) + ".ppm")).string());
    scene.cams.push_back(load_camera_file(cam_path.string(), img.width, img.height));
    scene.images.push_back(img);
    scene.depths.push_back(
        read_pfm((fs::path(dir) / "depths" / (std::string(name) + ".pfm")).string()));
  }
  if (scene.cams.empty()) throw std::runtime_error("load_scene: no cameras under " + dir);
  scene.tracks = load_track_file((fs::path(dir) / "tracks.txt").string());
  scene.tracks.validate(static_cast<int>(scene.cams.size()));
  return scene;
}

RigSplit make_rigs(const Scene& scene, int k, const GaussianParams& g) {
  const CombinationRanking ranking =
      rank_combinations(static_cast<int>(scene.cams.size()), k, scene.tracks, scene.cams, g);
  return {ranking.combinations.front().views, ranking.combinations.back().views};
}

double chamfer_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("chamfer_distance: empty point cloud");
  auto one_way = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double total = 0;
    for (const Vec3& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : to) best = std::min(best, (p - q).norm());
      total += best;
    }
    return total / static_cast<double>(from.size());
  };
  return 0.5 * (one_way(a, b) + one_way(b, a));
}

EvalReport evaluate_depths(const std::vector<FloatMap>& pred, const std::vector<FloatMap>& gt,
                           const std::vector<Camera>& cams, const std::vector<int>& view_ids) {
  if (pred.size() != gt.size() || pred.size() != cams.size() || pred.size() != view_ids.size())
    throw std::invalid_argument("evaluate_depths: mismatched inputs");
  EvalReport report;
  double err_sum = 0;
  std::int64_t total_valid = 0, in1 = 0, in2 = 0, in5 = 0;
  for (std::size_t v = 0; v < pred.size(); ++v) {
    const Camera& cam = cams[v];
    const double range = cam.depth_max - cam.depth_min;
    ViewEval ve;
    ve.view = view_ids[v];
    std::vector<Vec3> cloud_pred, cloud_gt;
    double view_err = 0;
    std::int64_t view_valid = 0, v1 = 0, v2 = 0, v5 = 0;
    for (int y = 0; y < gt[v].height; ++y)
      for (int x = 0; x < gt[v].width; ++x) {
        const float zg = gt[v].at(x, y);
        if (zg <= 0) continue;
        cloud_gt.push_back(cam.backproject(x, y, zg));
        const float zp = pred[v].at(x, y);
        if (zp <= 0) continue;
        cloud_pred.push_back(cam.backproject(x, y, zp));
        const double err = std::abs(static_cast<double>(zp) - zg);
        view_err += err;
        ++view_valid;
        if (err < 0.01 * range) ++v1;
        if (err < 0.02 * range) ++v2;
        if (err < 0.05 * range) ++v5;
      }
    if (view_valid == 0)
      throw std::runtime_error("evaluate_depths: no valid pixels for view " +
                               std::to_string(ve.view));
    ve.valid_pixels = view_valid;
    ve.depth_mae = view_err / static_cast<double>(view_valid);
    ve.inlier_1pct = static_cast<double>(v1) / static_cast<double>(view_valid);
    ve.inlier_2pct = static_cast<double>(v2) / static_cast<double>(view_valid);
    ve.inlier_5pct = static_cast<double>(v5) / static_cast<double>(view_valid);
    ve.chamfer = chamfer_distance(cloud_pred, cloud_gt);
    report.per_view.push_back(ve);
    err_sum += view_err;
    total_valid += view_valid;
    in1 += v1;
    in2 += v2;
    in5 += v5;
    report.chamfer += ve.chamfer;
  }
  report.depth_mae = err_sum / static_cast<double>(total_valid);
  report.inlier_1pct = static_cast<double>(in1) / static_cast<double>(total_valid);
  report.inlier_2pct = static_cast<double>(in2) / static_cast<double>(total_valid);
  report.inlier_5pct = static_cast<double>(in5) / static_cast<double>(total_valid);
  report.chamfer /= static_cast<double>(pred.size());
  return report;
}

// ---------------------------------------------------------------------------
// spec JSON

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec3_from_json(const json& j) { return {j.at(0), j.at(1), j.at(2)}; }

}  // namespace

SceneSpec SceneSpec::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("scene spec: cannot open " + path);
  json j;
  is >> j;
  SceneSpec spec;
  if (j.contains("primitive")) {
    const json& p = j["primitive"];
    const std::string type = p.value("type", "sphere");
    if (type == "sphere")
      spec.primitive.type = PrimitiveSpec::Type::kSphere;
    else if (type == "box")
      spec.primitive.type = PrimitiveSpec::Type::kBox;
    else if (type == "plane")
      spec.primitive.type = PrimitiveSpec::Type::kPlane;
    else
      throw std::runtime_error("scene spec: unknown primitive type '" + type + "'");
    if (p.contains("center")) spec.primitive.center = vec3_from_json(p["center"]);
    spec.primitive.radius = p.value("radius", spec.primitive.radius);
    if (p.contains("half_extents"))
      spec.primitive.half_extents = vec3_from_json(p["half_extents"]);
    if (p.contains("normal")) spec.primitive.normal = vec3_from_json(p["normal"]);
    spec.primitive.size = p.value("size", spec.primitive.size);
    if (p.contains("texture")) {
      const json& t = p["texture"];
      const std::string tt = t.value("type", "checker");
      spec.primitive.texture.type =
          tt == "noise" ? TextureSpec::Type::kNoise : TextureSpec::Type::kChecker;
      spec.primitive.texture.scale = t.value("scale", spec.primitive.texture.scale);
      spec.primitive.texture.noise = t.value("noise", spec.primitive.texture.noise);
      if (t.contains("palette")) {
        for (int c = 0; c < 3; ++c) {
          spec.primitive.texture.palette_a[static_cast<std::size_t>(c)] = t["palette"].at(0).at(c);
          spec.primitive.texture.palette_b[static_cast<std::size_t>(c)] = t["palette"].at(1).at(c);
        }
      }
    }
  }
  if (j.contains("rig")) {
    const json& r = j["rig"];
    spec.rig.count = r.value("count", spec.rig.count);
    spec.rig.radius = r.value("radius", spec.rig.radius);
    spec.rig.elevation_deg = r.value("elevation_deg", spec.rig.elevation_deg);
    if (r.contains("angles_deg"))
      spec.rig.angles_deg = r["angles_deg"].get<std::vector<double>>();
  }
  spec.image_size = j.value("image_size", spec.image_size);
  spec.num_tracks = j.value("num_tracks", spec.num_tracks);
  spec.seed = j.value("seed", spec.seed);
  return spec;
}

void SceneSpec::to_json_file(const std::string& path) const {
  json t{{"scale", primitive.texture.scale},
         {"noise", primitive.texture.noise},
         {"type", primitive.texture.type == TextureSpec::Type::kNoise ? "noise" : "checker"},
         {"palette",
          json::array({json::array({primitive.texture.palette_a[0], primitive.texture.palette_a[1],
                                    primitive.texture.palette_a[2]}),
                       json::array({primitive.texture.palette_b[0], primitive.texture.palette_b[1],
                                    primitive.texture.palette_b[2]})})}};
  json p{{"center", vec3_to_json(primitive.center)}, {"texture", std::move(t)}};
  switch (primitive.type) {
    case PrimitiveSpec::Type::kSphere:
      p["type"] = "sphere";
      p["radius"] = primitive.radius;
      break;
    case PrimitiveSpec::Type::kBox:
      p["type"] = "box";
      p["half_extents"] = vec3_to_json(primitive.half_extents);
      break;
    case PrimitiveSpec::Type::kPlane:
      p["type"] = "plane";
      p["normal"] = vec3_to_json(primitive.normal);
      p["size"] = primitive.size;
      break;
  }
  json j{{"primitive", std::move(p)},
         {"rig",
          {{"count", rig.count},
           {"radius", rig.radius},
           {"elevation_deg", rig.elevation_deg}}},
         {"image_size", image_size},
         {"num_tracks", num_tracks},
         {"seed", seed}};
  if (!rig.angles_deg.empty()) j["rig"]["angles_deg"] = rig.angles_deg;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("scene spec: cannot open " + path + " for writing");
  os << j.dump(2) << '\n';
}

}  // namespace mvsurf
