#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "test_util.hpp"
#include "voxrec/diagnostics.hpp"

using namespace voxrec;
using namespace voxrec::testutil;

TEST_CASE("junction probe on a linear ramp: all four limits coincide") {
  Aabb<3> box;
  box.lo = make_vec3(0, 0, 0);
  box.hi = make_vec3(2, 2, 2);
  Grid3 g = make_grid<3>({9, 9, 9}, box);
  for (int64_t v = 0; v < g.num_vertices(); ++v)
    g.values[v] = float(g.vertex_pos(g.unflat(v))[0] - 0.75);

  const JunctionProbe p =
      probe_junction(g, 0, 4, make_vec3(0, 0.6, 1.1));
  const Vec3 want = make_vec3(1, 0, 0);
  for (const Vec3& got : {p.grad_a_left, p.grad_a_right, p.grad_i_left,
                          p.grad_i_right})
    for (int k = 0; k < 3; ++k) CHECK(got[k] == doctest::Approx(want[k]));
  CHECK(p.x[0] == doctest::Approx(4 * g.spacing));
}

TEST_CASE("probe corner partition: four shared, disjoint private sets") {
  Grid3 g = random_grid<3>({6, 6, 6}, unit_box3(), 3);
  const JunctionProbe p = probe_junction(g, 1, 2, make_vec3(0.1, 0, -0.3));
  CHECK(p.on_face.size() == 4);
  CHECK(p.off_left.size() == 4);
  CHECK(p.off_right.size() == 4);
  std::set<int64_t> left(p.off_left.begin(), p.off_left.end());
  for (int64_t v : p.off_right) CHECK(left.count(v) == 0);
  for (int64_t v : p.on_face) {
    CHECK(g.unflat(v)[1] == 2);
    CHECK(left.count(v) == 0);
  }
  for (int64_t v : p.off_left) CHECK(g.unflat(v)[1] == 1);
  for (int64_t v : p.off_right) CHECK(g.unflat(v)[1] == 3);
}

TEST_CASE("boundary faces are rejected") {
  Grid3 g = random_grid<3>({6, 6, 6}, unit_box3(), 4);
  CHECK_THROWS_AS(probe_junction(g, 0, 0, make_vec3(0, 0, 0)),
                  FaceOnBoundary);
  CHECK_THROWS_AS(probe_junction(g, 0, 5, make_vec3(0, 0, 0)),
                  FaceOnBoundary);
  CHECK_THROWS_AS(probe_junction(g, 2, 17, make_vec3(0, 0, 0)),
                  FaceOnBoundary);
  CHECK_THROWS_AS(probe_junction(g, 3, 2, make_vec3(0, 0, 0)),
                  FaceOnBoundary);
}

TEST_CASE("interpolated limits agree, analytical limits split on the normal") {
  int analytic_gaps = 0;
  const int trials = 120;
  for (int trial = 0; trial < trials; ++trial) {
    Grid3 g = random_grid<3>({6, 6, 6}, unit_box3(), 1000 + trial);
    Rng rng(mix_seed(9, trial, 0));
    const int axis = int(rng.below(3));
    const int plane = 1 + int(rng.below(uint64_t(g.res[axis] - 2)));
    Vec3 pt;
    for (int a = 0; a < 3; ++a)
      pt[a] = rng.uniform(-1 + 0.25 * g.spacing, 1 - 0.25 * g.spacing);
    const JunctionProbe p = probe_junction(g, axis, plane, pt);

    CHECK(norm(p.grad_i_left - p.grad_i_right) <= 1e-9);
    // tangential components of the analytical estimator match exactly;
    // the discontinuity lives in the face-normal component
    for (int a = 0; a < 3; ++a)
      if (a != axis)
        CHECK(std::abs(p.grad_a_left[a] - p.grad_a_right[a]) < 1e-10);
    if (std::abs(p.grad_a_left[axis] - p.grad_a_right[axis]) > 1e-3)
      ++analytic_gaps;
  }
  CHECK(analytic_gaps >= int(0.95 * trials));
}

TEST_CASE("tangent-missing ray: positive SDF, both opacity curves flat") {
  const Grid2 g = bake_circle(16);
  const RayTrace2D tr =
      trace_ray_2d(g, make_vec2(-2, 0.9), make_vec2(1, 0), 256, 30.0);
  for (size_t i = 0; i < tr.t.size(); ++i) {
    CHECK(tr.f[i] > 0.0);
    CHECK(tr.alpha_a[i] < 1e-4);
    CHECK(tr.alpha_i[i] < 1e-4);
    if (i) CHECK(tr.t[i] > tr.t[i - 1]);
  }
  CHECK_THROWS_AS(
      trace_ray_2d(g, make_vec2(-2, 5), make_vec2(1, 0), 256, 30.0),
      NoIntersection);
}

TEST_CASE("center ray: analytical cos stair-steps, interpolated cos stays smooth") {
  const Grid2 g = bake_circle(16);
  const double s = 4.0 / g.spacing;
  const Vec2 dir = normalized(make_vec2(2, 1));
  const RayTrace2D tr = trace_ray_2d(g, make_vec2(-1.6, -0.8), dir, 256, s);

  double jump_a = 0, jump_i = 0;
  for (size_t i = 0; i + 1 < tr.t.size(); ++i) {
    if (tr.cell[i] == tr.cell[i + 1]) continue;
    jump_a = std::max(jump_a, std::abs(tr.cos_a[i + 1] - tr.cos_a[i]));
    jump_i = std::max(jump_i, std::abs(tr.cos_i[i + 1] - tr.cos_i[i]));
  }
  CHECK(jump_a > 10.0 * jump_i);
}

TEST_CASE("grazing chord shows the analytical weight glitch") {
  // a head-on crossing hides the glitch: the direction jump there is
  // second order and the opacity sees cos only through the half-step
  // offset; near tangency the transverse curvature dominates instead
  const Grid2 g = bake_circle(16);
  const double s = 4.0 / g.spacing;
  const Vec2 o = make_vec2(-2, 0.66), d = make_vec2(1, 0);

  const RayTrace2D tr = trace_ray_2d(g, o, d, 256, s);
  CHECK(glitch_metric(tr, true) > 5.0 * glitch_metric(tr, false));

  const RayTrace2D dense = trace_ray_2d(g, o, d, 512, s);
  CHECK(max_boundary_jump(dense, true) >
        10.0 * max_boundary_jump(dense, false));
}

TEST_CASE("interpolated curves smooth out under sample refinement") {
  const Grid2 g = bake_circle(16);
  const double s = 4.0 / g.spacing;
  const Vec2 o = make_vec2(-2, 0.21), d = make_vec2(1, 0);
  const RayTrace2D coarse = trace_ray_2d(g, o, d, 256, s);
  const RayTrace2D fine = trace_ray_2d(g, o, d, 512, s);

  // interpolated weight jumps shrink at least linearly with the step
  CHECK(max_boundary_jump(fine, false) <=
        0.6 * max_boundary_jump(coarse, false));

  // interpolated cos is continuous across cell crossings: its straddling
  // jumps also shrink with the step, unlike the analytical ones
  auto cos_jump = [](const RayTrace2D& tr, bool analytical) {
    const std::vector<double>& c = analytical ? tr.cos_a : tr.cos_i;
    double j = 0;
    for (size_t i = 0; i + 1 < c.size(); ++i)
      if (tr.cell[i] != tr.cell[i + 1])
        j = std::max(j, std::abs(c[i + 1] - c[i]));
    return j;
  };
  CHECK(cos_jump(fine, false) <= 0.6 * cos_jump(coarse, false));
  CHECK(cos_jump(fine, true) > 0.5 * cos_jump(coarse, true));
}

TEST_CASE("glitch metric arithmetic") {
  RayTrace2D tr;
  for (int i = 0; i < 20; ++i) {
    tr.t.push_back(i);
    tr.cell.push_back({i / 4, 0});  // boundary every 4 samples
    tr.w_a.push_back(0.4);
    tr.w_i.push_back(0.0);
  }
  // constant curve: no jump anywhere
  CHECK(glitch_metric(tr, true) == 0.0);
  // all-zero curve guards the normalization
  CHECK(glitch_metric(tr, false) == 0.0);

  // one boundary-straddling jump of 0.2 against a peak of 0.4
  tr.w_a[8] = 0.2;  // samples 7|8 straddle cells 1|2
  for (int i = 9; i < 20; ++i) tr.w_a[i] = 0.2;
  CHECK(glitch_metric(tr, true) == doctest::Approx(0.5));

  RayTrace2D tiny;
  for (int i = 0; i < 8; ++i) {
    tiny.t.push_back(i);
    tiny.cell.push_back({0, 0});
    tiny.w_a.push_back(0);
    tiny.w_i.push_back(0);
  }
  CHECK_THROWS_AS(glitch_metric(tiny, true), std::invalid_argument);
}

TEST_CASE("trace CSV: exact header, one row per sample, parseable") {
  const Grid2 g = bake_circle(16);
  const RayTrace2D tr =
      trace_ray_2d(g, make_vec2(-2, 0.1), make_vec2(1, 0), 32, 30.0);
  const std::string path = "trace_test.csv";
  write_trace_csv(tr, path);

  std::ifstream in(path);
  std::string line;
  REQUIRE(bool(std::getline(in, line)));
  CHECK(line == "t,f,cos_a,cos_i,alpha_a,alpha_i,w_a,w_i");
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string fieldstr;
    int fields = 0;
    while (std::getline(ss, fieldstr, ',')) {
      CHECK_NOTHROW(std::stod(fieldstr));
      ++fields;
    }
    CHECK(fields == 8);
    if (rows == 0) {
      std::stringstream first(line);
      std::getline(first, fieldstr, ',');
      CHECK(std::stod(fieldstr) == doctest::Approx(tr.t[0]));
    }
    ++rows;
  }
  CHECK(rows == 32);
  std::remove(path.c_str());
}
