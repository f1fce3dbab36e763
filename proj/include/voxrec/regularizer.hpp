#pragma once

#include <cstdint>
#include <vector>

#include "voxrec/core.hpp"
#include "voxrec/grid.hpp"

namespace voxrec {

// Deduplicated, sorted corner vertices of every cube touched by the sample
// batch. Boundary membership is decided per vertex at loss time.
std::vector<int64_t> collect_vertices(const Grid3& grid,
                                      const std::vector<Vec3>& samples);

// Eikonal term: mean over the interior vertices of vr of (||n|| - 1)^2,
// with n read from the precomputed vertex-gradient field. The gradient is
// chained through the +-1/(2 eps) central-difference stencil and added into
// grad. ||n|| is floored at 1e-12 before inversion. Returns the loss.
double eikonal(const Grid3& grid, const VertexGradientField<3>& field,
               const std::vector<int64_t>& vr, GradAccum& grad,
               int threads = 0);

// Curvature term: mean over interior vertices of the squared norm of the
// per-axis second differences (stencil {+1,-2,+1}/eps^2). Returns the loss.
double curvature(const Grid3& grid, const std::vector<int64_t>& vr,
                 GradAccum& grad, int threads = 0);

// base += w_eik * g_eik + w_curv * g_curv, sparsity-aware.
void accumulate(GradAccum& base, const GradAccum& g_eik,
                const GradAccum& g_curv, double w_eik, double w_curv);

struct RegTerms {
  double l_eik = 0;
  double l_curv = 0;
};

struct TapeStats {
  size_t nodes = 0;
  size_t bytes = 0;
};

// Reference implementation of both terms on a record-everything reverse-mode
// tape; slow by construction, used as the gradient oracle and the benchmark
// baseline. Semantics match eikonal() + curvature() exactly.
RegTerms regularize_tape(const Grid3& grid, const std::vector<int64_t>& vr,
                         GradAccum& g_eik, GradAccum& g_curv,
                         TapeStats* stats = nullptr);

}  // namespace voxrec
