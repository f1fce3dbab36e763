#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxrec/core.hpp"

namespace voxrec {

// Queries this far outside the box (in units of spacing) are clamped; ray
// samplers produce boundary-grazing points.
inline constexpr double kGridClampTol = 1e-9;

// ---------------------------------------------------------------------------
// Dense SDF grid. Vertex values are stored as float in x-fastest order;
// spacing is uniform across axes, so the world box per axis is
// [origin, origin + (res-1)*spacing].
// ---------------------------------------------------------------------------
template <int D>
struct Grid {
  std::array<int, D> res{};
  double spacing = 1.0;
  Vec<D> origin;
  std::vector<float> values;

  static constexpr int kCorners = 1 << D;

  int64_t num_vertices() const {
    int64_t n = 1;
    for (int i = 0; i < D; ++i) n *= res[i];
    return n;
  }
  int64_t flat(const std::array<int, D>& idx) const {
    int64_t f = idx[D - 1];
    for (int i = D - 2; i >= 0; --i) f = f * res[i] + idx[i];
    return f;
  }
  std::array<int, D> unflat(int64_t f) const {
    std::array<int, D> idx;
    for (int i = 0; i < D; ++i) {
      idx[i] = int(f % res[i]);
      f /= res[i];
    }
    return idx;
  }
  Vec<D> vertex_pos(const std::array<int, D>& idx) const {
    Vec<D> p;
    for (int i = 0; i < D; ++i) p[i] = origin[i] + idx[i] * spacing;
    return p;
  }
  Aabb<D> aabb() const {
    Aabb<D> b;
    b.lo = origin;
    for (int i = 0; i < D; ++i) b.hi[i] = origin[i] + (res[i] - 1) * spacing;
    return b;
  }
  double at(const std::array<int, D>& idx) const { return values[flat(idx)]; }
  float& at_ref(const std::array<int, D>& idx) { return values[flat(idx)]; }
};

using Grid2 = Grid<2>;
using Grid3 = Grid<3>;

// Allocates a zero grid over `box` with `res` vertices per axis. Throws
// InvalidResolution if the per-axis extents disagree with a single spacing.
template <int D>
Grid<D> make_grid(const std::array<int, D>& res, const Aabb<D>& box);

// ---------------------------------------------------------------------------
// Interpolation sample: the cube containing x, its corner weights, and the
// weight gradients (world units). weights sum to 1, weight gradients sum to 0.
// ---------------------------------------------------------------------------
template <int D>
struct InterpolationSample {
  std::array<int, D> base{};                        // lower cube corner
  std::array<int64_t, (1 << D)> corners{};          // flat vertex indices
  std::array<double, (1 << D)> weights{};
  std::array<Vec<D>, (1 << D)> weight_grads{};      // d w_i / d x
  double value = 0;
};

template <int D>
struct GradientSample {
  Vec<D> analytical;
  std::array<Vec<D>, (1 << D)> vertex_grads{};
  Vec<D> interpolated;
};

// Locates the cube owning x (owner = floor clamped to res-2 on junction
// faces) and returns the fractional coordinate within it.
template <int D>
std::array<int, D> locate(const Grid<D>& grid, const Vec<D>& x, Vec<D>* frac);

// d-linear interpolation of vertex values at x.
template <int D>
InterpolationSample<D> interpolate(const Grid<D>& grid, const Vec<D>& x);

// Same, but evaluated on the (poly-)linear branch of an explicit cell; used
// by junction probes to take exact one-sided limits.
template <int D>
InterpolationSample<D> interpolate_in_cell(const Grid<D>& grid, const Vec<D>& x,
                                           const std::array<int, D>& base);

// Spatial derivative of the interpolant, piecewise constant per cube along
// each axis and generally discontinuous across cube faces.
template <int D>
Vec<D> analytical_gradient(const Grid<D>& grid, const Vec<D>& x);

// ---------------------------------------------------------------------------
// Per-vertex gradient field, central differences at interior vertices and
// one-sided differences on the boundary. Stored as double so the chain from
// values to interpolated gradients is exact.
// ---------------------------------------------------------------------------
template <int D>
struct VertexGradientField {
  std::array<int, D> res{};
  std::vector<double> data;  // D components per vertex, x-fastest

  Vec<D> at(int64_t flat) const {
    Vec<D> g;
    for (int i = 0; i < D; ++i) g[i] = data[flat * D + i];
    return g;
  }
};

template <int D>
VertexGradientField<D> vertex_gradients(const Grid<D>& grid, int threads = 0);

// Trilinear blend of vertex gradients; continuous across junction faces.
template <int D>
Vec<D> interpolated_gradient(const Grid<D>& grid, const Vec<D>& x,
                             const VertexGradientField<D>& field);

template <int D>
Vec<D> interpolated_gradient_in_cell(const Grid<D>& grid, const Vec<D>& x,
                                     const VertexGradientField<D>& field,
                                     const std::array<int, D>& base);

template <int D>
GradientSample<D> gradient_sample(const Grid<D>& grid, const Vec<D>& x,
                                  const VertexGradientField<D>& field);

// ---------------------------------------------------------------------------
// Sparse gradient accumulator: dense double storage plus a touched list so
// scatter and clear cost O(touched), not O(grid).
// ---------------------------------------------------------------------------
struct GradAccum {
  std::vector<double> g;
  std::vector<uint8_t> mark;
  std::vector<int64_t> touched;

  void resize(int64_t n) {
    g.assign(n, 0.0);
    mark.assign(n, 0);
    touched.clear();
  }
  void add(int64_t i, double v) {
    if (!mark[i]) {
      mark[i] = 1;
      touched.push_back(i);
    }
    g[i] += v;
  }
  void clear() {
    for (int64_t i : touched) {
      g[i] = 0.0;
      mark[i] = 0;
    }
    touched.clear();
  }
};

// Adjoint of interpolation: contribution to vertex c_i is upstream * w_i.
template <int D>
void backprop_value(const Grid<D>& grid, const Vec<D>& x, double upstream,
                    GradAccum& acc);

// Adjoint of the interpolated gradient: scatters
// d(upstream . grad_i(x)) / d f[v] over the central-difference stencils of
// the cube corners (at most 8 + 24 vertices in 3D).
template <int D>
void backprop_interpolated_gradient(const Grid<D>& grid, const Vec<D>& x,
                                    const Vec<D>& upstream, GradAccum& acc);

// Adjoint of the analytical gradient (the ablation path): contribution to
// corner c_i is upstream . grad_x w_i(x).
template <int D>
void backprop_analytical_gradient(const Grid<D>& grid, const Vec<D>& x,
                                  const Vec<D>& upstream, GradAccum& acc);

// Trilinear resampling onto a finer grid covering the same world box.
template <int D>
Grid<D> upsample(const Grid<D>& grid, const std::array<int, D>& new_res,
                 int threads = 0);

// Separable truncated Gaussian (radius ceil(2*sigma/spacing), edge-clamped
// sample indices). sigma = 0 is the identity.
template <int D>
Grid<D> gaussian_filter(const Grid<D>& grid, double sigma, int threads = 0);

// Binary serialization: magic "SDFG", u32 dims, u32 resolutions, f64 origin
// and spacing, then f32 values in x-fastest order. Little-endian.
template <int D>
void save_grid(const Grid<D>& grid, const std::string& path);

// Reads a grid saved by save_grid; throws IoError on malformed input and
// ShapeMismatch if the stored dimensionality is not D.
template <int D>
Grid<D> load_grid(const std::string& path);

// Dimensionality recorded in a grid file, without loading the payload.
int peek_grid_dims(const std::string& path);

}  // namespace voxrec
