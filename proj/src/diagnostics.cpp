#include "voxrec/diagnostics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "voxrec/renderer.hpp"

namespace voxrec {

namespace {

// analytical gradient on the closed linear branch of one cell
template <int D>
Vec<D> analytic_limit(const Grid<D>& grid, const Vec<D>& x,
                      const std::array<int, D>& base) {
  const InterpolationSample<D> s = interpolate_in_cell<D>(grid, x, base);
  Vec<D> g;
  for (int k = 0; k < D; ++k) {
    g[k] = 0;
    for (int c = 0; c < Grid<D>::kCorners; ++c)
      g[k] += s.weight_grads[c][k] * double(grid.values[s.corners[c]]);
  }
  return g;
}

}  // namespace

JunctionProbe probe_junction(const Grid3& grid, int axis, int plane,
                             const Vec3& point) {
  if (axis < 0 || axis > 2) throw FaceOnBoundary("face axis out of range");
  if (plane < 1 || plane > grid.res[axis] - 2)
    throw FaceOnBoundary("face is on the grid boundary or outside it");

  JunctionProbe probe;
  probe.axis = axis;
  probe.plane = plane;
  probe.x = point;
  probe.x[axis] = grid.origin[axis] + plane * grid.spacing;

  std::array<int, 3> base = locate<3>(grid, probe.x, nullptr);
  std::array<int, 3> left = base, right = base;
  left[axis] = plane - 1;
  right[axis] = plane;

  const VertexGradientField<3> field = vertex_gradients(grid);
  probe.grad_a_left = analytic_limit<3>(grid, probe.x, left);
  probe.grad_a_right = analytic_limit<3>(grid, probe.x, right);
  probe.grad_i_left = interpolated_gradient_in_cell<3>(grid, probe.x, field, left);
  probe.grad_i_right =
      interpolated_gradient_in_cell<3>(grid, probe.x, field, right);

  for (int c = 0; c < 8; ++c) {
    const std::array<int, 3> idx = {left[0] + (c & 1), left[1] + ((c >> 1) & 1),
                                    left[2] + (c >> 2)};
    if (idx[axis] == plane)
      probe.on_face.push_back(grid.flat(idx));
    else
      probe.off_left.push_back(grid.flat(idx));
  }
  for (int c = 0; c < 8; ++c) {
    const std::array<int, 3> idx = {right[0] + (c & 1),
                                    right[1] + ((c >> 1) & 1),
                                    right[2] + (c >> 2)};
    if (idx[axis] != plane) probe.off_right.push_back(grid.flat(idx));
  }
  return probe;
}

Grid2 bake_circle(int res, double radius_frac) {
  Aabb<2> box;
  box.lo = make_vec2(-1, -1);
  box.hi = make_vec2(1, 1);
  Grid2 g = make_grid<2>({res, res}, box);
  const double radius = radius_frac * 2.0;
  for (int64_t v = 0; v < g.num_vertices(); ++v)
    g.values[v] = float(norm(g.vertex_pos(g.unflat(v))) - radius);
  return g;
}

RayTrace2D trace_ray_2d(const Grid2& grid, const Vec2& o, const Vec2& dir,
                        int n_samples, double s) {
  const auto hit = intersect_aabb<2>(o, dir, grid.aabb());
  if (!hit) throw NoIntersection("2d ray misses the grid box");
  const double near = hit->first, far = hit->second;
  const double delta = (far - near) / n_samples;

  RayTrace2D tr;
  const VertexGradientField<2> field = vertex_gradients(grid);
  double trans_a = 1.0, trans_i = 1.0;
  for (int i = 0; i < n_samples; ++i) {
    const double t = near + (i + 0.5) * delta;
    const Vec2 x = o + t * dir;
    tr.t.push_back(t);
    tr.cell.push_back(locate<2>(grid, x, nullptr));
    tr.f.push_back(interpolate(grid, x).value);

    // raw gradient dot: the estimator's magnitude jumps must reach the
    // opacity for the glitch to show, so no normalization here
    const Vec2 ga = analytical_gradient(grid, x);
    const Vec2 gi = interpolated_gradient(grid, x, field);
    const double ca = dot(ga, dir);
    const double ci = dot(gi, dir);
    tr.cos_a.push_back(ca);
    tr.cos_i.push_back(ci);

    const double aa = neus_alpha(tr.f.back(), ca, delta, s);
    const double ai = neus_alpha(tr.f.back(), ci, delta, s);
    tr.alpha_a.push_back(aa);
    tr.alpha_i.push_back(ai);
    tr.w_a.push_back(trans_a * aa);
    tr.w_i.push_back(trans_i * ai);
    trans_a *= 1.0 - aa;
    trans_i *= 1.0 - ai;
  }
  return tr;
}

double max_boundary_jump(const RayTrace2D& trace, bool analytical) {
  if (trace.t.size() < 16)
    throw std::invalid_argument("trace needs at least 16 samples");
  const std::vector<double>& w = analytical ? trace.w_a : trace.w_i;
  double jump = 0;
  for (size_t i = 0; i + 1 < w.size(); ++i)
    if (trace.cell[i] != trace.cell[i + 1])
      jump = std::max(jump, std::abs(w[i + 1] - w[i]));
  return jump;
}

double glitch_metric(const RayTrace2D& trace, bool analytical) {
  const double jump = max_boundary_jump(trace, analytical);
  const std::vector<double>& w = analytical ? trace.w_a : trace.w_i;
  double peak = 0;
  for (double wi : w) peak = std::max(peak, wi);
  if (peak <= 0.0) return 0.0;
  return jump / peak;
}

void write_trace_csv(const RayTrace2D& trace, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open " + path + " for writing");
  std::fputs("t,f,cos_a,cos_i,alpha_a,alpha_i,w_a,w_i\n", f);
  for (size_t i = 0; i < trace.t.size(); ++i)
    std::fprintf(f, "%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                 trace.t[i], trace.f[i], trace.cos_a[i], trace.cos_i[i],
                 trace.alpha_a[i], trace.alpha_i[i], trace.w_a[i],
                 trace.w_i[i]);
  if (std::fclose(f) != 0) throw IoError("failed writing " + path);
}

}  // namespace voxrec
