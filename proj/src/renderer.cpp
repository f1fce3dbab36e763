#include "voxrec/renderer.hpp"

#include <omp.h>

#include <cmath>

namespace voxrec {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

constexpr double kDenFloor = 1e-6;
constexpr double kGradFloor = 1e-12;

}  // namespace

Ray make_ray(const Vec3& o, const Vec3& v, const Aabb<3>& box) {
  const auto hit = intersect_aabb<3>(o, v, box);
  if (!hit) throw NoIntersection("ray misses the grid box");
  Ray r;
  r.o = o;
  r.v = v;
  r.near = hit->first;
  r.far = hit->second;
  return r;
}

double neus_alpha(double f, double cos_theta, double delta, double s) {
  const double half = 0.5 * delta * cos_theta;
  const double phi_a = sigmoid(s * (f - half));
  const double phi_b = sigmoid(s * (f + half));
  const double den = std::max(phi_a, kDenFloor);
  const double a = (phi_a - phi_b) / den;
  return std::clamp(a, 0.0, 1.0);
}

double neus_alpha(double f, double cos_theta, double delta, double s,
                  AlphaGrad& grad) {
  grad = AlphaGrad{};
  const double half = 0.5 * delta * cos_theta;
  const double za = f - half;
  const double zb = f + half;
  const double phi_a = sigmoid(s * za);
  const double phi_b = sigmoid(s * zb);
  const double den = std::max(phi_a, kDenFloor);
  const double num = phi_a - phi_b;
  const double a = num / den;
  if (a <= 0.0) return 0.0;

  // dPhi/dz = s Phi (1 - Phi); dPhi/d ln s = s z Phi (1 - Phi)
  const double da = s * phi_a * (1.0 - phi_a);
  const double db = s * phi_b * (1.0 - phi_b);
  const bool floored = phi_a < kDenFloor;
  const double dden_df = floored ? 0.0 : da;
  const double dden_dcos = floored ? 0.0 : -0.5 * delta * da;
  const double dden_dlns = floored ? 0.0 : za * da;

  const double dnum_df = da - db;
  const double dnum_dcos = -0.5 * delta * (da + db);
  const double dnum_dlns = za * da - zb * db;

  const double inv_den = 1.0 / den;
  grad.df = (dnum_df - a * dden_df) * inv_den;
  grad.dcos = (dnum_dcos - a * dden_dcos) * inv_den;
  grad.dlns = (dnum_dlns - a * dden_dlns) * inv_den;
  return std::min(a, 1.0);
}

void composite(const std::vector<double>& alpha, const std::vector<Vec3>& color,
               const Vec3& background, Vec3& out, double& sum_w,
               std::vector<double>* trans) {
  out = make_vec3(0, 0, 0);
  sum_w = 0;
  double t = 1.0;
  if (trans) trans->assign(alpha.size(), 1.0);
  for (size_t i = 0; i < alpha.size(); ++i) {
    if (trans) (*trans)[i] = t;
    const double w = t * alpha[i];
    out += w * color[i];
    sum_w += w;
    t *= 1.0 - alpha[i];
  }
  out += t * background;
}

RaySegments render_ray(const Grid3& grid, const VertexGradientField<3>& field,
                       const RadianceParams& params, double lns, const Ray& ray,
                       const RenderConfig& cfg, Rng* rng) {
  const double s = std::exp(lns);
  RaySegments seg;
  seg.ray = ray;
  const int n = cfg.n_samples;
  seg.delta = (ray.far - ray.near) / n;
  seg.t.resize(n);
  for (int i = 0; i < n; ++i) {
    const double xi = rng ? rng->uniform() : 0.5;
    seg.t[i] = ray.near + (i + xi) * seg.delta;
  }

  seg.f.reserve(n);
  seg.g.reserve(n);
  seg.cos.reserve(n);
  seg.alpha.reserve(n);
  seg.trans.reserve(n);
  seg.color.reserve(n);
  seg.ctx.resize(n);

  double trans = 1.0;
  for (int i = 0; i < n; ++i) {
    if (cfg.trans_cutoff > 0 && trans < cfg.trans_cutoff) break;
    const Vec3 x = ray.o + seg.t[i] * ray.v;
    const double f = interpolate(grid, x).value;
    const Vec3 g = cfg.interpolated ? interpolated_gradient(grid, x, field)
                                    : analytical_gradient(grid, x);
    const double gn = norm(g);
    Vec3 nrm;
    double cos_theta;
    if (gn < kGradFloor) {
      nrm = -ray.v;
      cos_theta = cfg.normalize_cos ? -1.0 : dot(g, ray.v);
    } else {
      nrm = (1.0 / gn) * g;
      cos_theta = cfg.normalize_cos ? dot(nrm, ray.v) : dot(g, ray.v);
    }
    const double a = neus_alpha(f, cos_theta, seg.delta, s);
    const Vec3 c = shade(params, x, ray.v, nrm, seg.ctx[i]);

    seg.f.push_back(f);
    seg.g.push_back(g);
    seg.cos.push_back(cos_theta);
    seg.alpha.push_back(a);
    seg.trans.push_back(trans);
    seg.color.push_back(c);
    const double w = trans * a;
    seg.out += w * c;
    seg.sum_w += w;
    trans *= 1.0 - a;
    seg.n_used = i + 1;
  }
  seg.out += trans * cfg.background;
  seg.ctx.resize(seg.n_used);
  return seg;
}

void backprop_ray(const Grid3& grid, const RadianceParams& params, double lns,
                  const RenderConfig& cfg, const RaySegments& seg,
                  const Vec3& d_color, double d_sum_w, GradAccum& g_grid,
                  GradAccum& g_tables, GradAccum& g_decoder, double& d_lns) {
  const double s = std::exp(lns);
  const int n = seg.n_used;

  // fourth channel carries the accumulated opacity: per-sample value 1,
  // background 0, so one suffix recurrence serves color and mask alike
  std::array<double, 4> behind = {cfg.background[0], cfg.background[1],
                                  cfg.background[2], 0.0};
  std::array<double, 4> up = {d_color[0], d_color[1], d_color[2], d_sum_w};

  for (int j = n - 1; j >= 0; --j) {
    const double tj = seg.trans[j];
    const Vec3& cj = seg.color[j];
    const std::array<double, 4> c4 = {cj[0], cj[1], cj[2], 1.0};

    double d_alpha = 0;
    for (int k = 0; k < 4; ++k) d_alpha += up[k] * tj * (c4[k] - behind[k]);
    const Vec3 dc = (tj * seg.alpha[j]) * d_color;

    // radiance path: tables, decoder, and the shading normal
    Vec3 dn = make_vec3(0, 0, 0);
    if (dc != make_vec3(0, 0, 0))
      dn = backprop_shade(params, seg.ctx[j], dc, g_tables, g_decoder,
                          cfg.normal_grad);

    // opacity path
    AlphaGrad ag;
    neus_alpha(seg.f[j], seg.cos[j], seg.delta, s, ag);
    const double df = d_alpha * ag.df;
    const double dcos = d_alpha * ag.dcos;
    d_lns += d_alpha * ag.dlns;

    const Vec3 x = seg.ray.o + seg.t[j] * seg.ray.v;
    if (df != 0.0) backprop_value(grid, x, df, g_grid);

    // chain cos theta and the unit normal back to the raw gradient
    const double gn = norm(seg.g[j]);
    if (gn >= kGradFloor) {
      Vec3 dg = make_vec3(0, 0, 0);
      if (cfg.normalize_cos) {
        const Vec3 nrm = (1.0 / gn) * seg.g[j];
        Vec3 lift = dcos * seg.ray.v + dn;
        lift -= dot(nrm, lift) * nrm;
        dg = (1.0 / gn) * lift;
      } else {
        dg = dcos * seg.ray.v;
        const Vec3 nrm = (1.0 / gn) * seg.g[j];
        Vec3 lift = dn - dot(nrm, dn) * nrm;
        dg += (1.0 / gn) * lift;
      }
      if (dg != make_vec3(0, 0, 0)) {
        if (cfg.interpolated)
          backprop_interpolated_gradient(grid, x, dg, g_grid);
        else
          backprop_analytical_gradient(grid, x, dg, g_grid);
      }
    }

    for (int k = 0; k < 4; ++k)
      behind[k] = seg.alpha[j] * c4[k] + (1.0 - seg.alpha[j]) * behind[k];
  }
}

namespace {

Image render_channels(const Grid3& grid, const VertexGradientField<3>& field,
                      const RadianceParams& params, double lns,
                      const Camera& cam, const RenderConfig& cfg, int threads,
                      bool mask) {
  Image img(cam.w, cam.h);
  const int t_eff = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 4) num_threads(t_eff)
  for (int py = 0; py < cam.h; ++py)
    for (int px = 0; px < cam.w; ++px) {
      Vec3 col = cfg.background;
      double sw = 0;
      try {
        const Ray ray = make_ray(cam.pos, cam.ray_dir(px, py), grid.aabb());
        const RaySegments seg =
            render_ray(grid, field, params, lns, ray, cfg, nullptr);
        col = seg.out;
        sw = seg.sum_w;
      } catch (const NoIntersection&) {
      }
      if (mask)
        img.set(px, py, make_vec3(sw, sw, sw));
      else
        img.set(px, py, make_vec3(std::clamp(col[0], 0.0, 1.0),
                                  std::clamp(col[1], 0.0, 1.0),
                                  std::clamp(col[2], 0.0, 1.0)));
    }
  return img;
}

}  // namespace

Image render_image(const Grid3& grid, const VertexGradientField<3>& field,
                   const RadianceParams& params, double lns, const Camera& cam,
                   const RenderConfig& cfg, int threads) {
  return render_channels(grid, field, params, lns, cam, cfg, threads, false);
}

Image render_mask(const Grid3& grid, const VertexGradientField<3>& field,
                  const RadianceParams& params, double lns, const Camera& cam,
                  const RenderConfig& cfg, int threads) {
  return render_channels(grid, field, params, lns, cam, cfg, threads, true);
}

}  // namespace voxrec
