#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_util.hpp"
#include "voxrec/renderer.hpp"
#include "voxrec/scene.hpp"

using namespace voxrec;
using namespace voxrec::testutil;

namespace {

Grid3 sphere_grid(int res, double pad = 1.2) {
  Aabb<3> box;
  box.lo = make_vec3(-pad, -pad, -pad);
  box.hi = make_vec3(pad, pad, pad);
  const AnalyticScene scene = make_sphere_scene();
  Grid3 g = make_grid<3>({res, res, res}, box);
  for (int64_t v = 0; v < g.num_vertices(); ++v)
    g.values[v] = float(sdf_query(scene, g.vertex_pos(g.unflat(v))));
  return g;
}

RadianceConfig toy_radiance() {
  RadianceConfig cfg;
  cfg.levels = 2;
  cfg.table_size = 64;
  cfg.features = 2;
  cfg.n_min = 2;
  cfg.n_max = 4;
  cfg.hidden = 8;
  return cfg;
}

}  // namespace

TEST_CASE("ray clipping against the grid box") {
  Aabb<3> box = unit_box3();
  const Ray r = make_ray(make_vec3(0, 0, 3), make_vec3(0, 0, -1), box);
  CHECK(r.near == doctest::Approx(2.0));
  CHECK(r.far == doctest::Approx(4.0));
  CHECK_THROWS_AS(make_ray(make_vec3(0, 5, 3), make_vec3(0, 0, -1), box),
                  NoIntersection);
}

TEST_CASE("segment sampling: even lengths, ordered midpoints, jitter bounds") {
  Grid3 g = sphere_grid(8);
  const VertexGradientField<3> field = vertex_gradients(g);
  const RadianceParams params = make_radiance(g.aabb(), 1, toy_radiance());
  RenderConfig cfg;
  cfg.n_samples = 4;
  cfg.trans_cutoff = 0;
  const Ray ray = make_ray(make_vec3(0, 0, 3), make_vec3(0, 0, -1), g.aabb());

  const RaySegments seg =
      render_ray(g, field, params, std::log(20.0), ray, cfg, nullptr);
  CHECK(seg.delta == doctest::Approx((ray.far - ray.near) / 4));
  for (int i = 0; i < 4; ++i)
    CHECK(seg.t[i] ==
          doctest::Approx(ray.near + (i + 0.5) * seg.delta).epsilon(1e-12));

  Rng rng(3);
  const RaySegments jit =
      render_ray(g, field, params, std::log(20.0), ray, cfg, &rng);
  for (int i = 0; i < 4; ++i) {
    CHECK(jit.t[i] >= ray.near + i * seg.delta);
    CHECK(jit.t[i] < ray.near + (i + 1) * seg.delta);
    if (i) CHECK(jit.t[i] > jit.t[i - 1]);
  }
}

TEST_CASE("opacity formula: saturation, receding rays, exact crossing value") {
  // far outside the surface both sigmoids saturate
  CHECK(neus_alpha(10.0, -1.0, 0.01, 20.0) == doctest::Approx(0.0).epsilon(1e-12));
  // receding ray: the sigmoid difference is negative, clamped away
  CHECK(neus_alpha(0.3, 0.5, 0.1, 20.0) == 0.0);
  CHECK(neus_alpha(-0.2, 0.7, 0.05, 5.0) == 0.0);
  // surface crossing with s delta/2 = ln 3: sigmoids land on 3/4 and 1/4
  const double s = 20.0;
  const double delta = 2.0 * std::log(3.0) / s;
  CHECK(std::abs(neus_alpha(0.0, -1.0, delta, s) - 2.0 / 3.0) < 1e-12);

  Rng rng(9);
  for (int i = 0; i < 10000; ++i) {
    const double a =
        neus_alpha(rng.uniform(-1, 1), rng.uniform(-1, 1),
                   rng.uniform(1e-4, 0.5), std::exp(rng.uniform(0, 5)));
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
}

TEST_CASE("opacity partials match finite differences") {
  Rng rng(21);
  int checked = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const double f = rng.uniform(-0.3, 0.3);
    const double ct = rng.uniform(-1, 0.2);
    const double delta = rng.uniform(0.01, 0.2);
    const double lns = rng.uniform(0.5, 4.0);
    const double s = std::exp(lns);

    AlphaGrad ag;
    const double a = neus_alpha(f, ct, delta, s, ag);
    if (a < 1e-5) continue;  // keep clear of the zero clamp boundary
    const double h = 1e-6;

    const double fd_f =
        (neus_alpha(f + h, ct, delta, s) - neus_alpha(f - h, ct, delta, s)) /
        (2 * h);
    const double fd_c =
        (neus_alpha(f, ct + h, delta, s) - neus_alpha(f, ct - h, delta, s)) /
        (2 * h);
    const double fd_s = (neus_alpha(f, ct, delta, std::exp(lns + h)) -
                         neus_alpha(f, ct, delta, std::exp(lns - h))) /
                        (2 * h);
    if (std::abs(fd_f) > 1e-4) CHECK(rel_err(ag.df, fd_f) < 1e-4);
    if (std::abs(fd_c) > 1e-4) CHECK(rel_err(ag.dcos, fd_c) < 1e-4);
    if (std::abs(fd_s) > 1e-4) CHECK(rel_err(ag.dlns, fd_s) < 1e-4);
    ++checked;
  }
  CHECK(checked > 500);
}

TEST_CASE("blending: occlusion, empty space, hand-computed weights") {
  const Vec3 white = make_vec3(1, 1, 1);
  const Vec3 black = make_vec3(0, 0, 0);
  Vec3 out;
  double sw;

  composite({1.0, 0.7}, {make_vec3(0.2, 0.4, 0.6), white}, white, out, sw);
  CHECK(out == make_vec3(0.2, 0.4, 0.6));
  CHECK(sw == 1.0);

  composite({0.0, 0.0, 0.0}, {white, white, white}, make_vec3(0.1, 0.2, 0.3),
            out, sw);
  CHECK(out == make_vec3(0.1, 0.2, 0.3));
  CHECK(sw == 0.0);

  std::vector<double> trans;
  composite({0.5, 0.5}, {white, white}, black, out, sw, &trans);
  CHECK(trans[0] == 1.0);
  CHECK(trans[1] == 0.5);
  CHECK(sw == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(out[0] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("peak blend weight sits at the sphere intersection") {
  Grid3 g = sphere_grid(32);
  const VertexGradientField<3> field = vertex_gradients(g);
  const RadianceParams params = make_radiance(g.aabb(), 4, toy_radiance());
  RenderConfig cfg;
  cfg.n_samples = 128;

  const Ray ray = make_ray(make_vec3(0, 0, 2), make_vec3(0, 0, -1), g.aabb());
  const RaySegments seg =
      render_ray(g, field, params, std::log(60.0), ray, cfg, nullptr);

  int best = 0;
  for (int i = 1; i < seg.n_used; ++i) {
    const double wi = seg.trans[i] * seg.alpha[i];
    const double wb = seg.trans[best] * seg.alpha[best];
    if (wi > wb) best = i;
  }
  // analytic hit: |o| - radius = 2 - 0.5
  CHECK(std::abs(seg.t[best] - 1.5) <= seg.delta);
  CHECK(seg.sum_w > 0.9);
}

TEST_CASE("rays through empty space return the background") {
  Grid3 g = sphere_grid(32);
  const VertexGradientField<3> field = vertex_gradients(g);
  const RadianceParams params = make_radiance(g.aabb(), 4, toy_radiance());
  RenderConfig cfg;
  cfg.background = make_vec3(0.2, 0.3, 0.4);

  const Ray ray = make_ray(make_vec3(1.0, 1.0, 2), make_vec3(0, 0, -1),
                           g.aabb());
  const RaySegments seg =
      render_ray(g, field, params, std::log(60.0), ray, cfg, nullptr);
  for (int k = 0; k < 3; ++k)
    CHECK(std::abs(seg.out[k] - cfg.background[k]) < 1e-3);
  CHECK(seg.sum_w < 1e-3);
}

TEST_CASE("deterministic replay, divergence across seeds") {
  Grid3 g = sphere_grid(16);
  const VertexGradientField<3> field = vertex_gradients(g);
  const RadianceParams params = make_radiance(g.aabb(), 4, toy_radiance());
  RenderConfig cfg;
  const Ray ray = make_ray(make_vec3(0.1, -0.2, 2), make_vec3(0, 0, -1),
                           g.aabb());

  Rng ra(42), rb(42), rc(43);
  const RaySegments a =
      render_ray(g, field, params, std::log(30.0), ray, cfg, &ra);
  const RaySegments b =
      render_ray(g, field, params, std::log(30.0), ray, cfg, &rb);
  const RaySegments c =
      render_ray(g, field, params, std::log(30.0), ray, cfg, &rc);
  CHECK(a.out == b.out);
  CHECK(a.t == b.t);
  CHECK(a.t != c.t);
}

TEST_CASE("render invariants hold on rough random geometry") {
  Grid3 g = random_grid<3>({12, 12, 12}, unit_box3(), 17);
  gaussian_filter(g, 1.0);
  const VertexGradientField<3> field = vertex_gradients(g);
  const RadianceParams params = make_radiance(g.aabb(), 4, toy_radiance());
  RenderConfig cfg;
  cfg.n_samples = 64;
  cfg.trans_cutoff = 0;

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Vec3 o = make_vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), 2.5);
    Vec3 target = make_vec3(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), 0);
    const Ray ray = make_ray(o, normalized(target - o), g.aabb());
    Rng jitter(mix_seed(7, trial, 0));
    const RaySegments seg = render_ray(g, field, params,
                                       rng.uniform(1.0, 3.5), ray, cfg, &jitter);
    CHECK(seg.sum_w <= 1.0 + 1e-6);
    CHECK(seg.sum_w >= 0.0);
    for (int i = 0; i < seg.n_used; ++i) {
      CHECK(seg.alpha[i] >= 0.0);
      CHECK(seg.alpha[i] <= 1.0);
      if (i) CHECK(seg.trans[i] <= seg.trans[i - 1]);
    }
    // the standalone blender reproduces the inline compositing
    Vec3 out;
    double sw;
    composite(seg.alpha, seg.color, cfg.background, out, sw);
    CHECK(std::abs(sw - seg.sum_w) < 1e-12);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(out[k] - seg.out[k]) < 1e-12);
  }
}

static void check_backward(bool interpolated) {
  Grid3 g = sphere_grid(8);
  Rng noise(interpolated ? 100 : 200);
  for (float& v : g.values) v = float(double(v) + noise.uniform(-0.02, 0.02));

  RadianceParams params = make_radiance(g.aabb(), 31, toy_radiance());
  Rng trng(13);
  for (float& t : params.tables) t = float(trng.uniform(-0.4, 0.4));

  RenderConfig cfg;
  cfg.n_samples = 16;
  cfg.trans_cutoff = 0;
  cfg.interpolated = interpolated;
  const double lns = std::log(8.0);
  const Ray ray =
      make_ray(make_vec3(0.15, -0.1, 2), normalized(make_vec3(-0.05, 0.08, -1)),
               g.aabb());

  const Vec3 uc = make_vec3(0.9, -0.4, 0.6);
  const double uw = 0.8;
  auto loss_of = [&](const Grid3& gg, const RadianceParams& pp,
                     double ls) {
    const VertexGradientField<3> f = vertex_gradients(gg);
    const RaySegments seg = render_ray(gg, f, pp, ls, ray, cfg, nullptr);
    return dot(uc, seg.out) + uw * seg.sum_w;
  };

  const VertexGradientField<3> field = vertex_gradients(g);
  const RaySegments seg = render_ray(g, field, params, lns, ray, cfg, nullptr);
  GradAccum g_grid, g_tab, g_dec;
  g_grid.resize(g.num_vertices());
  g_tab.resize(int64_t(params.tables.size()));
  g_dec.resize(params.decoder_size());
  double d_lns = 0;
  backprop_ray(g, params, lns, cfg, seg, uc, uw, g_grid, g_tab, g_dec, d_lns);

  // every grid vertex, including ones the ray never touches
  int live = 0;
  for (int64_t v = 0; v < g.num_vertices(); ++v) {
    const double fd = fd_vertex<3>(g, v, 1e-4, [&](Grid3& gg) {
      return loss_of(gg, params, lns);
    });
    const double got = g_grid.g[v];
    if (std::abs(fd) < 1e-6) {
      CHECK(std::abs(got) < 1e-5);
    } else {
      CHECK(rel_err(got, fd) < 1e-3);
      ++live;
    }
  }
  CHECK(live > 10);

  const double h = 1e-6;
  const double fd_lns = (loss_of(g, params, lns + h) -
                         loss_of(g, params, lns - h)) /
                        (2 * h);
  CHECK(rel_err(d_lns, fd_lns) < 1e-3);

  int table_checked = 0;
  for (int64_t e : g_tab.touched) {
    if (table_checked >= 40) break;
    const double fd = fd_param(&params.tables[e], 1e-5, [&]() {
      return loss_of(g, params, lns);
    });
    if (std::abs(fd) > 1e-7) {
      CHECK(rel_err(g_tab.g[e], fd) < 1e-3);
      ++table_checked;
    }
  }
  CHECK(table_checked > 10);

  int dec_checked = 0;
  for (int64_t e : g_dec.touched) {
    if (dec_checked >= 40) break;
    const double fd = fd_param(&params.decoder[e], 1e-5, [&]() {
      return loss_of(g, params, lns);
    });
    if (std::abs(fd) > 1e-7) {
      CHECK(rel_err(g_dec.g[e], fd) < 1e-3);
      ++dec_checked;
    }
  }
  CHECK(dec_checked > 10);
}

TEST_CASE("full backward pass equals finite differences: interpolated mode") {
  check_backward(true);
}

TEST_CASE("full backward pass equals finite differences: analytical mode") {
  check_backward(false);
}

TEST_CASE("zero upstream leaves every accumulator untouched") {
  Grid3 g = sphere_grid(8);
  const VertexGradientField<3> field = vertex_gradients(g);
  const RadianceParams params = make_radiance(g.aabb(), 3, toy_radiance());
  RenderConfig cfg;
  cfg.n_samples = 8;
  const Ray ray = make_ray(make_vec3(0, 0, 2), make_vec3(0, 0, -1), g.aabb());
  const RaySegments seg =
      render_ray(g, field, params, std::log(20.0), ray, cfg, nullptr);

  GradAccum g_grid, g_tab, g_dec;
  g_grid.resize(g.num_vertices());
  g_tab.resize(int64_t(params.tables.size()));
  g_dec.resize(params.decoder_size());
  double d_lns = 0;
  backprop_ray(g, params, std::log(20.0), cfg, seg, make_vec3(0, 0, 0), 0.0,
               g_grid, g_tab, g_dec, d_lns);
  CHECK(g_grid.touched.empty());
  CHECK(g_tab.touched.empty());
  CHECK(g_dec.touched.empty());
  CHECK(d_lns == 0.0);
}

TEST_CASE("disentangled mode writes nothing through the shading normal") {
  // mask-only upstream: color gradient zero, so the only grid writes come
  // from the opacity path; flipping normal_grad must not change them
  Grid3 g = sphere_grid(8);
  const VertexGradientField<3> field = vertex_gradients(g);
  RadianceParams params = make_radiance(g.aabb(), 3, toy_radiance());
  Rng trng(14);
  for (float& t : params.tables) t = float(trng.uniform(-0.4, 0.4));
  RenderConfig cfg;
  cfg.n_samples = 16;
  cfg.trans_cutoff = 0;
  const double lns = std::log(15.0);
  const Ray ray = make_ray(make_vec3(0, 0.1, 2), make_vec3(0, 0, -1), g.aabb());
  const RaySegments seg = render_ray(g, field, params, lns, ray, cfg, nullptr);

  GradAccum on_grid, on_tab, on_dec, off_grid, off_tab, off_dec;
  on_grid.resize(g.num_vertices());
  off_grid.resize(g.num_vertices());
  on_tab.resize(int64_t(params.tables.size()));
  off_tab.resize(int64_t(params.tables.size()));
  on_dec.resize(params.decoder_size());
  off_dec.resize(params.decoder_size());
  double lns_on = 0, lns_off = 0;

  const Vec3 uc = make_vec3(1, 1, 1);
  RenderConfig off = cfg;
  off.normal_grad = false;
  backprop_ray(g, params, lns, cfg, seg, uc, 0.0, on_grid, on_tab, on_dec,
               lns_on);
  backprop_ray(g, params, lns, off, seg, uc, 0.0, off_grid, off_tab, off_dec,
               lns_off);

  // radiance parameter gradients identical; grid gradients differ because
  // the normal path is live only in the first call
  CHECK(on_tab.touched.size() == off_tab.touched.size());
  for (int64_t e : on_tab.touched) CHECK(on_tab.g[e] == off_tab.g[e]);
  for (int64_t e : on_dec.touched) CHECK(on_dec.g[e] == off_dec.g[e]);
  CHECK(lns_on == lns_off);

  double diff = 0;
  for (int64_t v : on_grid.touched) diff += std::abs(on_grid.g[v] - off_grid.g[v]);
  CHECK(diff > 0.0);
}

TEST_CASE("image and mask renders agree with per-ray evaluation") {
  Grid3 g = sphere_grid(24);
  const VertexGradientField<3> field = vertex_gradients(g);
  const RadianceParams params = make_radiance(g.aabb(), 8, toy_radiance());
  RenderConfig cfg;
  cfg.background = make_vec3(1, 1, 1);
  const double lns = std::log(60.0);

  const Camera cam = make_camera(make_vec3(0, 0, 2.2), make_vec3(0, 0, 0),
                                 make_vec3(0, 1, 0), 60.0, 9, 9);
  const Image img = render_image(g, field, params, lns, cam, cfg, 1);
  const Image msk = render_mask(g, field, params, lns, cam, cfg, 1);

  // center pixel: solid hit; corner pixel: empty space
  CHECK(msk.at(4, 4)[0] > 0.95);
  CHECK(msk.at(0, 0)[0] < 0.05);
  for (int k = 0; k < 3; ++k) CHECK(img.at(0, 0)[k] > 0.99);

  const Ray ray = make_ray(cam.pos, cam.ray_dir(4, 4), g.aabb());
  const RaySegments seg = render_ray(g, field, params, lns, ray, cfg, nullptr);
  for (int k = 0; k < 3; ++k)
    CHECK(img.at(4, 4)[k] == doctest::Approx(seg.out[k]).epsilon(1e-12));
}
