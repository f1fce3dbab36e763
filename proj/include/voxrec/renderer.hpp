#pragma once

#include <vector>

#include "voxrec/core.hpp"
#include "voxrec/grid.hpp"
#include "voxrec/image.hpp"
#include "voxrec/radiance.hpp"
#include "voxrec/scene.hpp"

namespace voxrec {

struct Ray {
  Vec3 o;
  Vec3 v;  // unit
  double near = 0, far = 0;
};

// clips o + t v against the box; throws NoIntersection on a miss
Ray make_ray(const Vec3& o, const Vec3& v, const Aabb<3>& box);

struct RenderConfig {
  int n_samples = 128;
  bool interpolated = true;   // gradient source: interpolated vs analytical
  bool normalize_cos = true;  // cos theta against the unit normal vs raw dot
  bool normal_grad = true;    // keep the shading-normal path in backward
  double trans_cutoff = 1e-4;  // stop marching once T drops below; 0 disables
  Vec3 background = make_vec3(0, 0, 0);
};

// opacity of one segment: how much of the sigmoid CDF the segment crosses
double neus_alpha(double f, double cos_theta, double delta, double s);

struct AlphaGrad {
  double df = 0, dcos = 0, dlns = 0;
};
double neus_alpha(double f, double cos_theta, double delta, double s,
                  AlphaGrad& grad);

// front-to-back blend; trans, when given, receives T_i before each sample
void composite(const std::vector<double>& alpha, const std::vector<Vec3>& color,
               const Vec3& background, Vec3& out, double& sum_w,
               std::vector<double>* trans = nullptr);

// everything the backward pass needs, kept per ray
struct RaySegments {
  Ray ray;
  double delta = 0;
  int n_used = 0;             // samples actually marched (cutoff may stop early)
  std::vector<double> t;      // sample distances
  std::vector<double> f;      // SDF values
  std::vector<Vec3> g;        // raw gradient at each sample
  std::vector<double> cos;    // cos theta fed to the opacity
  std::vector<double> alpha;
  std::vector<double> trans;  // T_i
  std::vector<Vec3> color;    // per-sample shade
  std::vector<ShadeContext> ctx;
  Vec3 out = make_vec3(0, 0, 0);
  double sum_w = 0;
};

// rng drives stratified jitter; null rng uses segment midpoints
RaySegments render_ray(const Grid3& grid, const VertexGradientField<3>& field,
                       const RadianceParams& params, double lns, const Ray& ray,
                       const RenderConfig& cfg, Rng* rng);

// scatters loss gradients: grid vertices, radiance tables/decoder, ln s
void backprop_ray(const Grid3& grid, const RadianceParams& params, double lns,
                  const RenderConfig& cfg, const RaySegments& seg,
                  const Vec3& d_color, double d_sum_w, GradAccum& g_grid,
                  GradAccum& g_tables, GradAccum& g_decoder, double& d_lns);

// midpoint-sampled forward render; rays missing the grid box get background
Image render_image(const Grid3& grid, const VertexGradientField<3>& field,
                   const RadianceParams& params, double lns,
                   const Camera& cam, const RenderConfig& cfg, int threads = 0);

// companion mask render: accumulated opacity per pixel in all channels
Image render_mask(const Grid3& grid, const VertexGradientField<3>& field,
                  const RadianceParams& params, double lns, const Camera& cam,
                  const RenderConfig& cfg, int threads = 0);

}  // namespace voxrec
