#include "voxrec/grid.hpp"

#include <omp.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace voxrec {

static_assert(std::endian::native == std::endian::little,
              "grid files are little-endian");

template <int D>
Grid<D> make_grid(const std::array<int, D>& res, const Aabb<D>& box) {
  for (int i = 0; i < D; ++i)
    if (res[i] < 2) throw InvalidResolution("grid needs >= 2 vertices per axis");
  Grid<D> g;
  g.res = res;
  g.origin = box.lo;
  g.spacing = (box.hi[0] - box.lo[0]) / (res[0] - 1);
  for (int i = 1; i < D; ++i) {
    double s = (box.hi[i] - box.lo[i]) / (res[i] - 1);
    if (std::abs(s - g.spacing) > 1e-9 * g.spacing)
      throw InvalidResolution("resolution incompatible with uniform spacing");
  }
  if (!(g.spacing > 0)) throw InvalidResolution("degenerate box");
  g.values.assign(g.num_vertices(), 0.0f);
  return g;
}

template <int D>
std::array<int, D> locate(const Grid<D>& grid, const Vec<D>& x, Vec<D>* frac) {
  std::array<int, D> base;
  for (int i = 0; i < D; ++i) {
    double u = (x[i] - grid.origin[i]) / grid.spacing;
    if (u < -kGridClampTol || u > grid.res[i] - 1 + kGridClampTol)
      throw QueryOutsideGrid("query outside grid box");
    u = std::clamp(u, 0.0, double(grid.res[i] - 1));
    int b = std::min(int(std::floor(u)), grid.res[i] - 2);
    base[i] = b;
    if (frac) (*frac)[i] = u - b;
  }
  return base;
}

template <int D>
InterpolationSample<D> interpolate_in_cell(const Grid<D>& grid, const Vec<D>& x,
                                           const std::array<int, D>& base) {
  InterpolationSample<D> s;
  s.base = base;
  Vec<D> u;
  for (int i = 0; i < D; ++i)
    u[i] = (x[i] - grid.origin[i]) / grid.spacing - base[i];

  const double inv_eps = 1.0 / grid.spacing;
  for (int c = 0; c < Grid<D>::kCorners; ++c) {
    std::array<int, D> idx = base;
    double w = 1.0;
    for (int a = 0; a < D; ++a) {
      const bool hi = (c >> a) & 1;
      idx[a] += hi;
      w *= hi ? u[a] : 1.0 - u[a];
    }
    s.corners[c] = grid.flat(idx);
    s.weights[c] = w;
    for (int k = 0; k < D; ++k) {
      double g = (c >> k) & 1 ? 1.0 : -1.0;
      for (int a = 0; a < D; ++a) {
        if (a == k) continue;
        g *= (c >> a) & 1 ? u[a] : 1.0 - u[a];
      }
      s.weight_grads[c][k] = g * inv_eps;
    }
    s.value += w * double(grid.values[s.corners[c]]);
  }
  return s;
}

template <int D>
InterpolationSample<D> interpolate(const Grid<D>& grid, const Vec<D>& x) {
  return interpolate_in_cell<D>(grid, x, locate<D>(grid, x, nullptr));
}

template <int D>
Vec<D> analytical_gradient(const Grid<D>& grid, const Vec<D>& x) {
  InterpolationSample<D> s = interpolate(grid, x);
  Vec<D> g;
  for (int c = 0; c < Grid<D>::kCorners; ++c)
    g += s.weight_grads[c] * double(grid.values[s.corners[c]]);
  return g;
}

// One axis of the vertex-gradient stencil: central difference inside,
// one-sided on the boundary.
template <int D>
static inline double axis_diff(const Grid<D>& grid, std::array<int, D> idx,
                               int axis) {
  const int r = grid.res[axis];
  const int i = idx[axis];
  double lo, hi, scale;
  if (i == 0) {
    idx[axis] = 1;
    hi = grid.at(idx);
    idx[axis] = 0;
    lo = grid.at(idx);
    scale = 1.0 / grid.spacing;
  } else if (i == r - 1) {
    idx[axis] = r - 1;
    hi = grid.at(idx);
    idx[axis] = r - 2;
    lo = grid.at(idx);
    scale = 1.0 / grid.spacing;
  } else {
    idx[axis] = i + 1;
    hi = grid.at(idx);
    idx[axis] = i - 1;
    lo = grid.at(idx);
    scale = 0.5 / grid.spacing;
  }
  return (hi - lo) * scale;
}

template <int D>
VertexGradientField<D> vertex_gradients(const Grid<D>& grid, int threads) {
  for (int i = 0; i < D; ++i)
    if (grid.res[i] < 3) throw GridTooSmall("vertex gradients need res >= 3");
  VertexGradientField<D> f;
  f.res = grid.res;
  const int64_t n = grid.num_vertices();
  f.data.resize(n * D);
#pragma omp parallel for schedule(static) num_threads(threads > 0 ? threads : omp_get_max_threads())
  for (int64_t v = 0; v < n; ++v) {
    const std::array<int, D> idx = grid.unflat(v);
    for (int a = 0; a < D; ++a) f.data[v * D + a] = axis_diff<D>(grid, idx, a);
  }
  return f;
}

template <int D>
Vec<D> interpolated_gradient_in_cell(const Grid<D>& grid, const Vec<D>& x,
                                     const VertexGradientField<D>& field,
                                     const std::array<int, D>& base) {
  InterpolationSample<D> s = interpolate_in_cell<D>(grid, x, base);
  Vec<D> g;
  for (int c = 0; c < Grid<D>::kCorners; ++c)
    g += field.at(s.corners[c]) * s.weights[c];
  return g;
}

template <int D>
Vec<D> interpolated_gradient(const Grid<D>& grid, const Vec<D>& x,
                             const VertexGradientField<D>& field) {
  return interpolated_gradient_in_cell<D>(grid, x, field, locate<D>(grid, x, nullptr));
}

template <int D>
GradientSample<D> gradient_sample(const Grid<D>& grid, const Vec<D>& x,
                                  const VertexGradientField<D>& field) {
  InterpolationSample<D> s = interpolate(grid, x);
  GradientSample<D> out;
  for (int c = 0; c < Grid<D>::kCorners; ++c) {
    out.analytical += s.weight_grads[c] * double(grid.values[s.corners[c]]);
    out.vertex_grads[c] = field.at(s.corners[c]);
    out.interpolated += out.vertex_grads[c] * s.weights[c];
  }
  return out;
}

template <int D>
void backprop_value(const Grid<D>& grid, const Vec<D>& x, double upstream,
                    GradAccum& acc) {
  if (upstream == 0.0) {
    locate<D>(grid, x, nullptr);  // still validate the query
    return;
  }
  InterpolationSample<D> s = interpolate(grid, x);
  for (int c = 0; c < Grid<D>::kCorners; ++c)
    acc.add(s.corners[c], upstream * s.weights[c]);
}

// Scatters through one corner's central/one-sided difference stencil.
template <int D>
static inline void scatter_vertex_grad(const Grid<D>& grid,
                                       const std::array<int, D>& idx,
                                       const Vec<D>& upstream, GradAccum& acc) {
  for (int a = 0; a < D; ++a) {
    const double u = upstream[a];
    if (u == 0.0) continue;
    const int r = grid.res[a];
    const int i = idx[a];
    std::array<int, D> n = idx;
    if (i == 0) {
      n[a] = 1;
      acc.add(grid.flat(n), u / grid.spacing);
      n[a] = 0;
      acc.add(grid.flat(n), -u / grid.spacing);
    } else if (i == r - 1) {
      n[a] = r - 1;
      acc.add(grid.flat(n), u / grid.spacing);
      n[a] = r - 2;
      acc.add(grid.flat(n), -u / grid.spacing);
    } else {
      const double h = 0.5 * u / grid.spacing;
      n[a] = i + 1;
      acc.add(grid.flat(n), h);
      n[a] = i - 1;
      acc.add(grid.flat(n), -h);
    }
  }
}

template <int D>
void backprop_interpolated_gradient(const Grid<D>& grid, const Vec<D>& x,
                                    const Vec<D>& upstream, GradAccum& acc) {
  InterpolationSample<D> s = interpolate(grid, x);
  for (int c = 0; c < Grid<D>::kCorners; ++c) {
    const double w = s.weights[c];
    if (w == 0.0) continue;
    std::array<int, D> idx = s.base;
    for (int a = 0; a < D; ++a) idx[a] += (c >> a) & 1;
    scatter_vertex_grad<D>(grid, idx, upstream * w, acc);
  }
}

template <int D>
void backprop_analytical_gradient(const Grid<D>& grid, const Vec<D>& x,
                                  const Vec<D>& upstream, GradAccum& acc) {
  InterpolationSample<D> s = interpolate(grid, x);
  for (int c = 0; c < Grid<D>::kCorners; ++c)
    acc.add(s.corners[c], dot(upstream, s.weight_grads[c]));
}

template <int D>
Grid<D> upsample(const Grid<D>& grid, const std::array<int, D>& new_res,
                 int threads) {
  for (int i = 0; i < D; ++i)
    if (new_res[i] <= grid.res[i])
      throw InvalidResolution("upsample target must exceed source resolution");
  Grid<D> out = make_grid<D>(new_res, grid.aabb());
  const int64_t n = out.num_vertices();
#pragma omp parallel for schedule(static) num_threads(threads > 0 ? threads : omp_get_max_threads())
  for (int64_t v = 0; v < n; ++v) {
    const Vec<D> p = out.vertex_pos(out.unflat(v));
    out.values[v] = float(interpolate(grid, p).value);
  }
  return out;
}

template <int D>
Grid<D> gaussian_filter(const Grid<D>& grid, double sigma, int threads) {
  if (sigma < 0) throw std::invalid_argument("sigma must be >= 0");
  const int radius = sigma > 0 ? int(std::ceil(2.0 * sigma / grid.spacing)) : 0;
  if (radius == 0) return grid;

  std::vector<double> kernel(2 * radius + 1);
  double sum = 0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-sq(k * grid.spacing) / (2.0 * sq(sigma)));
    sum += kernel[k + radius];
  }
  for (double& w : kernel) w /= sum;

  Grid<D> cur = grid;
  Grid<D> next = grid;
  const int64_t n = grid.num_vertices();
  for (int axis = 0; axis < D; ++axis) {
    const int r = grid.res[axis];
#pragma omp parallel for schedule(static) num_threads(threads > 0 ? threads : omp_get_max_threads())
    for (int64_t v = 0; v < n; ++v) {
      std::array<int, D> idx = cur.unflat(v);
      const int center = idx[axis];
      double acc = 0;
      for (int k = -radius; k <= radius; ++k) {
        idx[axis] = std::clamp(center + k, 0, r - 1);
        acc += kernel[k + radius] * cur.at(idx);
      }
      next.values[v] = float(acc);
    }
    std::swap(cur, next);
  }
  return cur;
}

template <int D>
void save_grid(const Grid<D>& grid, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write("SDFG", 4);
  const uint32_t dims = D;
  f.write(reinterpret_cast<const char*>(&dims), 4);
  for (int i = 0; i < D; ++i) {
    const uint32_t r = grid.res[i];
    f.write(reinterpret_cast<const char*>(&r), 4);
  }
  for (int i = 0; i < D; ++i) {
    const double o = grid.origin[i];
    f.write(reinterpret_cast<const char*>(&o), 8);
  }
  f.write(reinterpret_cast<const char*>(&grid.spacing), 8);
  f.write(reinterpret_cast<const char*>(grid.values.data()),
          std::streamsize(grid.values.size() * sizeof(float)));
  if (!f) throw IoError("write failed: " + path);
}

int peek_grid_dims(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char magic[4];
  uint32_t dims = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&dims), 4);
  if (!f || std::memcmp(magic, "SDFG", 4) != 0)
    throw IoError("not a grid file: " + path);
  return int(dims);
}

template <int D>
Grid<D> load_grid(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "SDFG", 4) != 0)
    throw IoError("not a grid file: " + path);
  uint32_t dims = 0;
  f.read(reinterpret_cast<char*>(&dims), 4);
  if (dims != uint32_t(D)) throw ShapeMismatch("grid dimensionality mismatch");
  Grid<D> g;
  for (int i = 0; i < D; ++i) {
    uint32_t r = 0;
    f.read(reinterpret_cast<char*>(&r), 4);
    if (r < 2) throw IoError("corrupt grid header: " + path);
    g.res[i] = int(r);
  }
  for (int i = 0; i < D; ++i) f.read(reinterpret_cast<char*>(&g.origin[i]), 8);
  f.read(reinterpret_cast<char*>(&g.spacing), 8);
  if (!f || !(g.spacing > 0)) throw IoError("corrupt grid header: " + path);
  g.values.resize(g.num_vertices());
  f.read(reinterpret_cast<char*>(g.values.data()),
         std::streamsize(g.values.size() * sizeof(float)));
  if (!f) throw IoError("truncated grid file: " + path);
  return g;
}

#define VOXREC_INSTANTIATE_GRID(D)                                             \
  template Grid<D> make_grid<D>(const std::array<int, D>&, const Aabb<D>&);    \
  template std::array<int, D> locate<D>(const Grid<D>&, const Vec<D>&,         \
                                        Vec<D>*);                              \
  template InterpolationSample<D> interpolate<D>(const Grid<D>&,               \
                                                 const Vec<D>&);               \
  template InterpolationSample<D> interpolate_in_cell<D>(                      \
      const Grid<D>&, const Vec<D>&, const std::array<int, D>&);               \
  template Vec<D> analytical_gradient<D>(const Grid<D>&, const Vec<D>&);       \
  template VertexGradientField<D> vertex_gradients<D>(const Grid<D>&, int);    \
  template Vec<D> interpolated_gradient<D>(const Grid<D>&, const Vec<D>&,      \
                                           const VertexGradientField<D>&);     \
  template Vec<D> interpolated_gradient_in_cell<D>(                            \
      const Grid<D>&, const Vec<D>&, const VertexGradientField<D>&,            \
      const std::array<int, D>&);                                              \
  template GradientSample<D> gradient_sample<D>(const Grid<D>&, const Vec<D>&, \
                                                const VertexGradientField<D>&);\
  template void backprop_value<D>(const Grid<D>&, const Vec<D>&, double,       \
                                  GradAccum&);                                 \
  template void backprop_interpolated_gradient<D>(const Grid<D>&,              \
                                                  const Vec<D>&, const Vec<D>&,\
                                                  GradAccum&);                 \
  template void backprop_analytical_gradient<D>(const Grid<D>&, const Vec<D>&, \
                                                const Vec<D>&, GradAccum&);    \
  template Grid<D> upsample<D>(const Grid<D>&, const std::array<int, D>&, int);\
  template Grid<D> gaussian_filter<D>(const Grid<D>&, double, int);            \
  template void save_grid<D>(const Grid<D>&, const std::string&);              \
  template Grid<D> load_grid<D>(const std::string&);

VOXREC_INSTANTIATE_GRID(2)
VOXREC_INSTANTIATE_GRID(3)

}  // namespace voxrec
