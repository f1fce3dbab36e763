#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "voxrec/core.hpp"
#include "voxrec/grid.hpp"

namespace voxrec {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> tris;

  bool empty() const { return tris.empty(); }
  double area() const;
};

// Zero-level-set extraction with the standard 256-case tables. Shared edge
// vertices are deduplicated, so closed level sets come out watertight;
// triangles are wound so the face normal points toward positive values.
TriangleMesh marching_cubes(const Grid3& grid, double level = 0.0,
                            int threads = 0);

// Area-weighted uniform surface samples, deterministic per seed.
std::vector<Vec3> sample_surface(const TriangleMesh& mesh, int n,
                                 uint64_t seed);

// Uniform samples on an analytic sphere, deterministic per seed.
std::vector<Vec3> sample_sphere_surface(const Vec3& center, double radius,
                                        int n, uint64_t seed);

// Symmetric point-set distance: 0.5 * (mean_a min_b ||a-b|| + mean_b min_a).
// Backed by a kd-tree; equal to the O(nm) scan.
double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

// ASCII PLY. Positions are written with float precision.
void save_ply(const TriangleMesh& mesh, const std::string& path);
TriangleMesh load_ply(const std::string& path);

}  // namespace voxrec
