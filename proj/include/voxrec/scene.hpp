#pragma once

#include <string>
#include <vector>

#include "voxrec/core.hpp"
#include "voxrec/grid.hpp"
#include "voxrec/image.hpp"

namespace voxrec {

enum class ShapeKind { Sphere, Box, RoundedBox, Torus, TexturedPlane, Union };
enum class TextureKind { Constant, Checker, Stripes };

struct Primitive {
  ShapeKind kind = ShapeKind::Sphere;
  Vec3 center;
  double radius = 0.5;          // sphere
  Vec3 half_extents;            // box / rounded box / textured plane
  double rounding = 0.1;        // rounded box
  double major_radius = 0.45;   // torus (axis y)
  double minor_radius = 0.15;
};

struct Texture {
  TextureKind kind = TextureKind::Constant;
  Vec3 color_a;
  Vec3 color_b;
  double scale = 0.25;  // world-space feature size
};

struct AnalyticScene {
  ShapeKind kind = ShapeKind::Sphere;
  std::vector<Primitive> prims;  // one entry unless kind == Union
  Texture texture;
  Vec3 background;
  Aabb3 box;
  bool glossy = false;
};

// Exact signed distance, negative inside.
double sdf_query(const AnalyticScene& scene, const Vec3& x);

// Surface normal by central differences of the analytic SDF.
Vec3 analytic_normal(const AnalyticScene& scene, const Vec3& x);

// Shaded surface color at p with normal n, viewed along view_dir (unit,
// pointing from the camera towards p). Deterministic fixed light.
Vec3 surface_color(const AnalyticScene& scene, const Vec3& p, const Vec3& n,
                   const Vec3& view_dir);

// Vertex values = exact SDF at vertex positions.
Grid3 bake_grid(const AnalyticScene& scene, const std::array<int, 3>& res);

struct Camera {
  Vec3 pos;
  Vec3 forward, right, up;  // orthonormal
  double vfov_deg = 90.0;
  int w = 64, h = 64;

  // Ray direction through the pixel center, unit length.
  Vec3 ray_dir(int px, int py) const;
  // Pixel coordinates of a world point; false if it is behind the camera.
  bool project(const Vec3& p, double* px, double* py) const;
};

Camera make_camera(const Vec3& pos, const Vec3& look_at, const Vec3& up,
                   double vfov_deg, int w, int h);

struct CameraRig {
  std::vector<Camera> cams;
};

// Fibonacci-sphere placement at radius 2.5 x (max half extent), all cameras
// looking at the box center. n >= 2.
CameraRig make_rig(const AnalyticScene& scene, int n_views, int w, int h,
                   double vfov_deg = 90.0);

struct RenderedView {
  Image image;
  std::vector<double> mask;  // 1 = surface hit, row-major like the image
};

// Sphere-traced ground truth: 256 steps, hit threshold 1e-4 x box extent.
RenderedView render_ground_truth(const AnalyticScene& scene, const Camera& cam,
                                 int threads = 0);

// Scene presets used by tests and as CLI defaults.
AnalyticScene make_sphere_scene();
AnalyticScene make_box_scene();
AnalyticScene make_torus_scene();
AnalyticScene make_textured_plane_scene();

// JSON scene spec; unknown keys are rejected.
AnalyticScene parse_scene(const std::string& json_text);
AnalyticScene load_scene(const std::string& path);

// Dataset layout: view_%03d.ppm, mask_%03d.ppm, cameras.json under dir.
void write_dataset(const AnalyticScene& scene, const CameraRig& rig,
                   const std::string& dir);
CameraRig load_rig(const std::string& cameras_json_path);

}  // namespace voxrec
