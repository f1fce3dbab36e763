#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "voxrec/core.hpp"
#include "voxrec/grid.hpp"

namespace voxrec {

// Two-sided gradient limits at a point on an interior cell face, for both
// estimators. The limits are evaluated on the closed linear branches of the
// two adjacent cells, which is the exact one-sided limit at the face.
struct JunctionProbe {
  int axis = 0;   // face normal axis
  int plane = 0;  // lattice index of the face along that axis
  Vec3 x;
  Vec3 grad_a_left, grad_a_right;  // analytical estimator
  Vec3 grad_i_left, grad_i_right;  // interpolated estimator
  std::vector<int64_t> on_face;    // corners shared by both cells
  std::vector<int64_t> off_left;   // corners private to the lower cell
  std::vector<int64_t> off_right;  // corners private to the upper cell
};

// point's off-axis coordinates pick the spot on the face; its coordinate
// along the face axis is replaced by the plane position
JunctionProbe probe_junction(const Grid3& grid, int axis, int plane,
                             const Vec3& point);

// One ray marched through a 2D grid with both gradient estimators side by
// side. The f column is shared: the value path does not depend on the
// estimator.
struct RayTrace2D {
  std::vector<double> t, f;
  std::vector<double> cos_a, cos_i;
  std::vector<double> alpha_a, alpha_i;
  std::vector<double> w_a, w_i;
  std::vector<std::array<int, 2>> cell;  // owning cell per sample
};

// circle SDF on [-1,1]^2, radius as a fraction of the box extent
Grid2 bake_circle(int res, double radius_frac = 0.35);

RayTrace2D trace_ray_2d(const Grid2& grid, const Vec2& o, const Vec2& dir,
                        int n_samples, double s);

// largest weight step between consecutive samples whose owning cells differ
double max_boundary_jump(const RayTrace2D& trace, bool analytical);

// max_boundary_jump normalized by the curve's peak weight
double glitch_metric(const RayTrace2D& trace, bool analytical);

void write_trace_csv(const RayTrace2D& trace, const std::string& path);

}  // namespace voxrec
