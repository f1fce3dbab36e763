#pragma once

#include <cmath>
#include <cstdint>

#include "voxrec/core.hpp"
#include "voxrec/grid.hpp"

namespace voxrec::testutil {

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-12);
}

// Central finite difference of a scalar function of one grid vertex. The
// perturbed values pass through float storage, so the divisor is the delta
// that was actually stored rather than the nominal 2h; interpolation is
// linear in the vertex values, which makes the quotient exact for those
// paths and a faithful oracle everywhere else.
template <int D, class F>
double fd_vertex(Grid<D>& grid, int64_t v, double h, F&& f) {
  const float saved = grid.values[v];
  grid.values[v] = float(double(saved) + h);
  const double hi = f(grid);
  const double x_hi = grid.values[v];
  grid.values[v] = float(double(saved) - h);
  const double lo = f(grid);
  const double x_lo = grid.values[v];
  grid.values[v] = saved;
  return (hi - lo) / (x_hi - x_lo);
}

// Central finite difference along one spatial axis.
template <int D, class F>
double fd_spatial(const Vec<D>& x, int axis, double h, F&& f) {
  Vec<D> a = x, b = x;
  a[axis] += h;
  b[axis] -= h;
  return (f(a) - f(b)) / (2.0 * h);
}

// Central finite difference of a scalar function of one entry in a float
// parameter array, with the same stored-delta convention as fd_vertex.
template <class F>
double fd_param(float* p, double h, F&& f) {
  const float saved = *p;
  *p = float(double(saved) + h);
  const double hi = f();
  const double x_hi = *p;
  *p = float(double(saved) - h);
  const double lo = f();
  const double x_lo = *p;
  *p = saved;
  return (hi - lo) / (x_hi - x_lo);
}

// Grid with independent uniform values in [-1, 1]; the stress case for
// junction discontinuities since nothing smooths the vertex data.
template <int D>
Grid<D> random_grid(const std::array<int, D>& res, const Aabb<D>& box,
                    uint64_t seed) {
  Grid<D> g = make_grid<D>(res, box);
  Rng rng(seed);
  for (float& v : g.values) v = float(rng.uniform(-1.0, 1.0));
  return g;
}

inline Aabb<3> unit_box3() {
  Aabb<3> b;
  b.lo = make_vec3(-1, -1, -1);
  b.hi = make_vec3(1, 1, 1);
  return b;
}

inline Aabb<2> unit_box2() {
  Aabb<2> b;
  b.lo = make_vec2(-1, -1);
  b.hi = make_vec2(1, 1);
  return b;
}

// Textbook dense Adam with one global step count, visiting every entry
// each step; the reference the sparse optimizer is measured against.
struct DenseAdam {
  double lr = 1e-2, beta1 = 0.9, beta2 = 0.99, eps = 1e-15;
  std::vector<double> m, v;
  int64_t t = 0;

  void resize(int64_t count) {
    m.assign(size_t(count), 0.0);
    v.assign(size_t(count), 0.0);
    t = 0;
  }
  void step(float* params, const std::vector<double>& grad) {
    ++t;
    for (size_t i = 0; i < grad.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      const double mh = m[i] / (1.0 - std::pow(beta1, double(t)));
      const double vh = v[i] / (1.0 - std::pow(beta2, double(t)));
      const double p = double(params[i]) - lr * mh / (std::sqrt(vh) + eps);
      params[i] = float(p);
    }
  }
};

// Uniform point strictly inside the grid box, margin in units of spacing.
template <int D>
Vec<D> random_point(const Grid<D>& grid, Rng& rng, double margin = 0.1) {
  const Aabb<D> box = grid.aabb();
  Vec<D> p;
  for (int i = 0; i < D; ++i)
    p[i] = rng.uniform(box.lo[i] + margin * grid.spacing,
                       box.hi[i] - margin * grid.spacing);
  return p;
}

}  // namespace voxrec::testutil
