#include "voxrec/scene.hpp"

#include <omp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace voxrec {

using nlohmann::json;

static double box_sdf(const Vec3& p, const Vec3& h) {
  Vec3 q = make_vec3(std::abs(p[0]) - h[0], std::abs(p[1]) - h[1],
                     std::abs(p[2]) - h[2]);
  Vec3 qp = make_vec3(std::max(q[0], 0.0), std::max(q[1], 0.0),
                      std::max(q[2], 0.0));
  return norm(qp) + std::min(std::max(q[0], std::max(q[1], q[2])), 0.0);
}

static double primitive_sdf(const Primitive& prim, const Vec3& x) {
  const Vec3 p = x - prim.center;
  switch (prim.kind) {
    case ShapeKind::Sphere:
      return norm(p) - prim.radius;
    case ShapeKind::Box:
    case ShapeKind::TexturedPlane:
      return box_sdf(p, prim.half_extents);
    case ShapeKind::RoundedBox:
      return box_sdf(p, prim.half_extents) - prim.rounding;
    case ShapeKind::Torus: {
      const double ring = std::hypot(p[0], p[2]) - prim.major_radius;
      return std::hypot(ring, p[1]) - prim.minor_radius;
    }
    case ShapeKind::Union:
      break;
  }
  throw std::logic_error("union is not a primitive");
}

double sdf_query(const AnalyticScene& scene, const Vec3& x) {
  double d = std::numeric_limits<double>::infinity();
  for (const Primitive& prim : scene.prims)
    d = std::min(d, primitive_sdf(prim, x));
  return d;
}

Vec3 analytic_normal(const AnalyticScene& scene, const Vec3& x) {
  const double h = 1e-5 * scene.box.max_extent();
  Vec3 n;
  for (int a = 0; a < 3; ++a) {
    Vec3 lo = x, hi = x;
    lo[a] -= h;
    hi[a] += h;
    n[a] = sdf_query(scene, hi) - sdf_query(scene, lo);
  }
  const double len = norm(n);
  return len > 0 ? n / len : make_vec3(0, 1, 0);
}

static Vec3 texture_color(const Texture& tex, const Vec3& p) {
  switch (tex.kind) {
    case TextureKind::Constant:
      return tex.color_a;
    case TextureKind::Checker: {
      int parity = 0;
      for (int a = 0; a < 3; ++a)
        parity ^= int(std::floor(p[a] / tex.scale)) & 1;
      return parity ? tex.color_b : tex.color_a;
    }
    case TextureKind::Stripes: {
      const int band = int(std::floor(p[0] / tex.scale));
      return (band & 1) ? tex.color_b : tex.color_a;
    }
  }
  return tex.color_a;
}

Vec3 surface_color(const AnalyticScene& scene, const Vec3& p, const Vec3& n,
                   const Vec3& view_dir) {
  Vec3 base;
  if (scene.kind == ShapeKind::TexturedPlane) {
    // high-contrast texture lives on the top face only
    base = n[1] > 0.7 ? texture_color(scene.texture, p) : scene.texture.color_a;
  } else {
    base = texture_color(scene.texture, p);
  }
  static const Vec3 light = normalized(make_vec3(1.0, 1.2, 0.8));
  const double lambert = std::max(0.0, dot(n, light));
  Vec3 c = base * (0.15 + 0.85 * lambert);
  if (scene.glossy) {
    const Vec3 refl = n * (2.0 * dot(n, light)) - light;
    const double spec = std::pow(std::max(0.0, dot(refl, -view_dir)), 32.0);
    c += Vec3(0.4 * spec);
  }
  for (int a = 0; a < 3; ++a) c[a] = std::clamp(c[a], 0.0, 1.0);
  return c;
}

Grid3 bake_grid(const AnalyticScene& scene, const std::array<int, 3>& res) {
  Grid3 g = make_grid<3>(res, scene.box);
  const int64_t n = g.num_vertices();
  for (int64_t v = 0; v < n; ++v)
    g.values[v] = float(sdf_query(scene, g.vertex_pos(g.unflat(v))));
  return g;
}

Vec3 Camera::ray_dir(int px, int py) const {
  const double tan_half = std::tan(0.5 * vfov_deg * M_PI / 180.0);
  const double aspect = double(w) / h;
  const double sx = (2.0 * (px + 0.5) / w - 1.0) * tan_half * aspect;
  const double sy = (1.0 - 2.0 * (py + 0.5) / h) * tan_half;
  return normalized(forward + right * sx + up * sy);
}

bool Camera::project(const Vec3& p, double* px, double* py) const {
  const Vec3 d = p - pos;
  const double z = dot(d, forward);
  if (z <= 0) return false;
  const double tan_half = std::tan(0.5 * vfov_deg * M_PI / 180.0);
  const double aspect = double(w) / h;
  const double sx = dot(d, right) / z / (tan_half * aspect);
  const double sy = dot(d, up) / z / tan_half;
  *px = (sx + 1.0) * 0.5 * w - 0.5;
  *py = (1.0 - sy) * 0.5 * h - 0.5;
  return true;
}

Camera make_camera(const Vec3& pos, const Vec3& look_at, const Vec3& up,
                   double vfov_deg, int w, int h) {
  Camera c;
  c.pos = pos;
  c.forward = normalized(look_at - pos);
  c.right = normalized(cross(c.forward, up));
  c.up = cross(c.right, c.forward);
  c.vfov_deg = vfov_deg;
  c.w = w;
  c.h = h;
  return c;
}

CameraRig make_rig(const AnalyticScene& scene, int n_views, int w, int h,
                   double vfov_deg) {
  if (n_views < 2) throw std::invalid_argument("rig needs at least 2 views");
  const Vec3 center = scene.box.center();
  const double radius = 2.5 * 0.5 * scene.box.max_extent();
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  CameraRig rig;
  for (int i = 0; i < n_views; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / n_views;
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double phi = golden * i;
    const Vec3 dir = make_vec3(r * std::cos(phi), y, r * std::sin(phi));
    const Vec3 up = std::abs(dir[1]) > 0.99 ? make_vec3(1, 0, 0)
                                            : make_vec3(0, 1, 0);
    rig.cams.push_back(
        make_camera(center + dir * radius, center, up, vfov_deg, w, h));
  }
  return rig;
}

RenderedView render_ground_truth(const AnalyticScene& scene, const Camera& cam,
                                 int threads) {
  RenderedView out;
  out.image = Image(cam.w, cam.h);
  out.mask.assign(size_t(cam.w) * cam.h, 0.0);
  const double extent = scene.box.max_extent();
  const double hit_eps = 1e-4 * extent;
  const double t_far = 2.0 * norm(cam.pos - scene.box.center()) + 2.0 * extent;

#pragma omp parallel for schedule(dynamic, 4) num_threads(threads > 0 ? threads : omp_get_max_threads())
  for (int py = 0; py < cam.h; ++py) {
    for (int px = 0; px < cam.w; ++px) {
      const Vec3 dir = cam.ray_dir(px, py);
      double t = 0.0;
      bool hit = false;
      for (int step = 0; step < 256; ++step) {
        const Vec3 p = cam.pos + dir * t;
        const double d = sdf_query(scene, p);
        if (d < hit_eps) {
          hit = true;
          break;
        }
        t += d;
        if (t > t_far) break;
      }
      if (hit) {
        const Vec3 p = cam.pos + dir * t;
        const Vec3 n = analytic_normal(scene, p);
        out.image.set(px, py, surface_color(scene, p, n, dir));
        out.mask[size_t(py) * cam.w + px] = 1.0;
      } else {
        out.image.set(px, py, scene.background);
      }
    }
  }
  return out;
}

static Aabb3 default_box() {
  Aabb3 b;
  b.lo = make_vec3(-1, -1, -1);
  b.hi = make_vec3(1, 1, 1);
  return b;
}

AnalyticScene make_sphere_scene() {
  AnalyticScene s;
  s.kind = ShapeKind::Sphere;
  s.prims.push_back({});
  s.prims[0].kind = ShapeKind::Sphere;
  s.prims[0].radius = 0.5;
  s.texture.kind = TextureKind::Checker;
  s.texture.color_a = make_vec3(0.9, 0.55, 0.25);
  s.texture.color_b = make_vec3(0.25, 0.45, 0.85);
  s.texture.scale = 0.25;
  s.background = make_vec3(0.02, 0.02, 0.03);
  s.box = default_box();
  return s;
}

AnalyticScene make_box_scene() {
  AnalyticScene s = make_sphere_scene();
  s.kind = ShapeKind::RoundedBox;
  s.prims[0].kind = ShapeKind::RoundedBox;
  s.prims[0].half_extents = make_vec3(0.35, 0.3, 0.4);
  s.prims[0].rounding = 0.08;
  return s;
}

AnalyticScene make_torus_scene() {
  AnalyticScene s = make_sphere_scene();
  s.kind = ShapeKind::Torus;
  s.prims[0].kind = ShapeKind::Torus;
  s.prims[0].major_radius = 0.45;
  s.prims[0].minor_radius = 0.18;
  return s;
}

AnalyticScene make_textured_plane_scene() {
  AnalyticScene s;
  s.kind = ShapeKind::TexturedPlane;
  s.prims.push_back({});
  s.prims[0].kind = ShapeKind::TexturedPlane;
  s.prims[0].half_extents = make_vec3(0.6, 0.08, 0.6);
  s.texture.kind = TextureKind::Stripes;
  s.texture.color_a = make_vec3(0.85, 0.75, 0.55);
  s.texture.color_b = make_vec3(0.25, 0.12, 0.05);
  s.texture.scale = 0.1;
  s.background = make_vec3(0.02, 0.02, 0.03);
  s.box = default_box();
  return s;
}

static Vec3 vec3_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3)
    throw IoError(std::string("scene spec: ") + what + " must be [x,y,z]");
  return make_vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

static void reject_unknown(const json& j, std::initializer_list<const char*> known,
                           const char* where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok)
      throw IoError(std::string("scene spec: unknown key '") + it.key() +
                    "' in " + where);
  }
}

static Primitive parse_primitive(const json& j) {
  reject_unknown(j,
                 {"shape", "center", "radius", "half_extents", "rounding",
                  "major_radius", "minor_radius"},
                 "primitive");
  Primitive p;
  const std::string shape = j.at("shape").get<std::string>();
  if (shape == "sphere")
    p.kind = ShapeKind::Sphere;
  else if (shape == "box")
    p.kind = ShapeKind::Box;
  else if (shape == "rounded_box")
    p.kind = ShapeKind::RoundedBox;
  else if (shape == "torus")
    p.kind = ShapeKind::Torus;
  else if (shape == "textured_plane")
    p.kind = ShapeKind::TexturedPlane;
  else
    throw IoError("scene spec: unknown shape '" + shape + "'");
  if (j.contains("center")) p.center = vec3_from(j["center"], "center");
  if (j.contains("radius")) p.radius = j["radius"].get<double>();
  if (j.contains("half_extents"))
    p.half_extents = vec3_from(j["half_extents"], "half_extents");
  if (j.contains("rounding")) p.rounding = j["rounding"].get<double>();
  if (j.contains("major_radius")) p.major_radius = j["major_radius"].get<double>();
  if (j.contains("minor_radius")) p.minor_radius = j["minor_radius"].get<double>();
  return p;
}

AnalyticScene parse_scene(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw IoError(std::string("scene spec: bad json: ") + e.what());
  }
  reject_unknown(j,
                 {"shape", "center", "radius", "half_extents", "rounding",
                  "major_radius", "minor_radius", "members", "texture",
                  "background", "box", "glossy"},
                 "scene");
  AnalyticScene s;
  const std::string shape = j.at("shape").get<std::string>();
  if (shape == "union") {
    s.kind = ShapeKind::Union;
    if (!j.contains("members") || !j["members"].is_array() ||
        j["members"].empty())
      throw IoError("scene spec: union needs a non-empty members array");
    for (const json& m : j["members"]) s.prims.push_back(parse_primitive(m));
  } else {
    json p = j;
    p.erase("texture");
    p.erase("background");
    p.erase("box");
    p.erase("glossy");
    s.prims.push_back(parse_primitive(p));
    s.kind = s.prims[0].kind;
  }
  if (j.contains("texture")) {
    const json& t = j["texture"];
    reject_unknown(t, {"kind", "color_a", "color_b", "scale"}, "texture");
    const std::string kind = t.at("kind").get<std::string>();
    if (kind == "constant")
      s.texture.kind = TextureKind::Constant;
    else if (kind == "checker")
      s.texture.kind = TextureKind::Checker;
    else if (kind == "stripes")
      s.texture.kind = TextureKind::Stripes;
    else
      throw IoError("scene spec: unknown texture kind '" + kind + "'");
    if (t.contains("color_a")) s.texture.color_a = vec3_from(t["color_a"], "color_a");
    if (t.contains("color_b")) s.texture.color_b = vec3_from(t["color_b"], "color_b");
    if (t.contains("scale")) s.texture.scale = t["scale"].get<double>();
  } else {
    s.texture.color_a = make_vec3(0.8, 0.8, 0.8);
  }
  s.background = j.contains("background")
                     ? vec3_from(j["background"], "background")
                     : make_vec3(0.02, 0.02, 0.03);
  if (j.contains("box")) {
    reject_unknown(j["box"], {"lo", "hi"}, "box");
    s.box.lo = vec3_from(j["box"].at("lo"), "box.lo");
    s.box.hi = vec3_from(j["box"].at("hi"), "box.hi");
    for (int a = 0; a < 3; ++a)
      if (!(s.box.lo[a] < s.box.hi[a]))
        throw IoError("scene spec: box.lo must be below box.hi");
  } else {
    s.box = default_box();
  }
  s.glossy = j.contains("glossy") && j["glossy"].get<bool>();
  return s;
}

AnalyticScene load_scene(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return parse_scene(text);
}

void write_dataset(const AnalyticScene& scene, const CameraRig& rig,
                   const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  json cams;
  cams["views"] = json::array();
  char name[64];
  for (size_t i = 0; i < rig.cams.size(); ++i) {
    const Camera& cam = rig.cams[i];
    RenderedView view = render_ground_truth(scene, cam);
    std::snprintf(name, sizeof name, "view_%03zu.ppm", i);
    write_ppm(view.image, dir + "/" + name);
    Image m(cam.w, cam.h);
    for (int y = 0; y < cam.h; ++y)
      for (int x = 0; x < cam.w; ++x)
        m.set(x, y, Vec3(view.mask[size_t(y) * cam.w + x]));
    std::snprintf(name, sizeof name, "mask_%03zu.ppm", i);
    write_ppm(m, dir + "/" + name);

    json c;
    c["position"] = {cam.pos[0], cam.pos[1], cam.pos[2]};
    c["forward"] = {cam.forward[0], cam.forward[1], cam.forward[2]};
    c["right"] = {cam.right[0], cam.right[1], cam.right[2]};
    c["up"] = {cam.up[0], cam.up[1], cam.up[2]};
    c["vfov_deg"] = cam.vfov_deg;
    c["width"] = cam.w;
    c["height"] = cam.h;
    cams["views"].push_back(c);
  }
  std::ofstream f(dir + "/cameras.json");
  if (!f) throw IoError("cannot write cameras.json under " + dir);
  f << cams.dump(2) << "\n";
}

CameraRig load_rig(const std::string& cameras_json_path) {
  std::ifstream f(cameras_json_path);
  if (!f) throw IoError("cannot open " + cameras_json_path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError(std::string("cameras.json: bad json: ") + e.what());
  }
  CameraRig rig;
  for (const json& c : j.at("views")) {
    Camera cam;
    cam.pos = vec3_from(c.at("position"), "position");
    cam.forward = vec3_from(c.at("forward"), "forward");
    cam.right = vec3_from(c.at("right"), "right");
    cam.up = vec3_from(c.at("up"), "up");
    cam.vfov_deg = c.at("vfov_deg").get<double>();
    cam.w = c.at("width").get<int>();
    cam.h = c.at("height").get<int>();
    rig.cams.push_back(cam);
  }
  return rig;
}

}  // namespace voxrec
