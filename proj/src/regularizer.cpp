#include "voxrec/regularizer.hpp"

#include <omp.h>

#include <algorithm>

namespace voxrec {

std::vector<int64_t> collect_vertices(const Grid3& grid,
                                      const std::vector<Vec3>& samples) {
  std::vector<int64_t> vr;
  vr.reserve(samples.size() * 8);
  for (const Vec3& x : samples) {
    const std::array<int, 3> base = locate<3>(grid, x, nullptr);
    for (int c = 0; c < 8; ++c) {
      const std::array<int, 3> idx = {base[0] + (c & 1), base[1] + ((c >> 1) & 1),
                                      base[2] + (c >> 2)};
      vr.push_back(grid.flat(idx));
    }
  }
  std::sort(vr.begin(), vr.end());
  vr.erase(std::unique(vr.begin(), vr.end()), vr.end());
  return vr;
}

static bool interior(const Grid3& grid, const std::array<int, 3>& idx) {
  for (int a = 0; a < 3; ++a)
    if (idx[a] < 1 || idx[a] > grid.res[a] - 2) return false;
  return true;
}

static int64_t count_interior(const Grid3& grid,
                              const std::vector<int64_t>& vr) {
  int64_t n = 0;
  for (int64_t v : vr) n += interior(grid, grid.unflat(v));
  return n;
}

// One vertex's eikonal contribution: loss term plus the six stencil writes.
static double eikonal_vertex(const Grid3& grid,
                             const VertexGradientField<3>& field, int64_t v,
                             double inv_n, GradAccum& grad) {
  const std::array<int, 3> idx = grid.unflat(v);
  const Vec3 n = field.at(v);
  const double len = std::max(norm(n), 1e-12);
  const double loss = sq(len - 1.0);
  // d loss / d n = 2 (1 - 1/len) n, then n_a = (f[+]-f[-]) / 2 eps
  const double scale = inv_n * 2.0 * (1.0 - 1.0 / len) / (2.0 * grid.spacing);
  for (int a = 0; a < 3; ++a) {
    const double g = scale * n[a];
    if (g == 0.0) continue;
    std::array<int, 3> nb = idx;
    nb[a] = idx[a] + 1;
    grad.add(grid.flat(nb), g);
    nb[a] = idx[a] - 1;
    grad.add(grid.flat(nb), -g);
  }
  return inv_n * loss;
}

static double curvature_vertex(const Grid3& grid, int64_t v, double inv_n,
                               GradAccum& grad) {
  const std::array<int, 3> idx = grid.unflat(v);
  const double inv_eps2 = 1.0 / sq(grid.spacing);
  const double f0 = grid.values[v];
  double loss = 0;
  for (int a = 0; a < 3; ++a) {
    std::array<int, 3> nb = idx;
    nb[a] = idx[a] + 1;
    const int64_t up = grid.flat(nb);
    nb[a] = idx[a] - 1;
    const int64_t dn = grid.flat(nb);
    const double d2 =
        (double(grid.values[up]) - 2.0 * f0 + double(grid.values[dn])) *
        inv_eps2;
    loss += sq(d2);
    const double c = inv_n * 2.0 * d2 * inv_eps2;
    if (c == 0.0) continue;
    grad.add(up, c);
    grad.add(dn, c);
    grad.add(v, -2.0 * c);
  }
  return inv_n * loss;
}

template <class PerVertex>
static double reg_loop(const Grid3& grid, const std::vector<int64_t>& vr,
                       GradAccum& grad, int threads, PerVertex&& per_vertex) {
  const int64_t n_int = count_interior(grid, vr);
  if (n_int == 0) return 0.0;
  const double inv_n = 1.0 / double(n_int);

  int t_eff = threads > 0 ? threads : omp_get_max_threads();
  t_eff = int(std::min<int64_t>(t_eff, vr.size()));
  if (t_eff <= 1) {
    double loss = 0;
    for (int64_t v : vr) {
      if (!interior(grid, grid.unflat(v))) continue;
      loss += per_vertex(v, inv_n, grad);
    }
    return loss;
  }

  // contiguous chunks, merged in thread order: deterministic per t_eff
  std::vector<GradAccum> parts(t_eff);
  std::vector<double> losses(t_eff, 0.0);
#pragma omp parallel num_threads(t_eff)
  {
    const int t = omp_get_thread_num();
    const int64_t lo = int64_t(vr.size()) * t / t_eff;
    const int64_t hi = int64_t(vr.size()) * (t + 1) / t_eff;
    parts[t].resize(grid.num_vertices());
    for (int64_t i = lo; i < hi; ++i) {
      const int64_t v = vr[i];
      if (!interior(grid, grid.unflat(v))) continue;
      losses[t] += per_vertex(v, inv_n, parts[t]);
    }
  }
  double loss = 0;
  for (int t = 0; t < t_eff; ++t) {
    loss += losses[t];
    for (int64_t i : parts[t].touched) grad.add(i, parts[t].g[i]);
  }
  return loss;
}

double eikonal(const Grid3& grid, const VertexGradientField<3>& field,
               const std::vector<int64_t>& vr, GradAccum& grad, int threads) {
  return reg_loop(grid, vr, grad, threads,
                  [&](int64_t v, double inv_n, GradAccum& acc) {
                    return eikonal_vertex(grid, field, v, inv_n, acc);
                  });
}

double curvature(const Grid3& grid, const std::vector<int64_t>& vr,
                 GradAccum& grad, int threads) {
  return reg_loop(grid, vr, grad, threads,
                  [&](int64_t v, double inv_n, GradAccum& acc) {
                    return curvature_vertex(grid, v, inv_n, acc);
                  });
}

void accumulate(GradAccum& base, const GradAccum& g_eik,
                const GradAccum& g_curv, double w_eik, double w_curv) {
  if (w_eik != 0.0)
    for (int64_t i : g_eik.touched) base.add(i, w_eik * g_eik.g[i]);
  if (w_curv != 0.0)
    for (int64_t i : g_curv.touched) base.add(i, w_curv * g_curv.g[i]);
}

// ---------------------------------------------------------------------------
// Tape reference: every arithmetic step becomes a node with parent links and
// local partials, differentiated by a generic reverse sweep. Nothing here
// knows the stencil structure; that is the point.
// ---------------------------------------------------------------------------
namespace {

struct Tape {
  struct Node {
    double val;
    int a, b;          // parent ids, -1 when unused
    double da, db;     // local partials
  };
  std::vector<Node> nodes;

  int leaf(double v) {
    nodes.push_back({v, -1, -1, 0, 0});
    return int(nodes.size()) - 1;
  }
  int unary(double v, int a, double da) {
    nodes.push_back({v, a, -1, da, 0});
    return int(nodes.size()) - 1;
  }
  int binary(double v, int a, int b, double da, double db) {
    nodes.push_back({v, a, b, da, db});
    return int(nodes.size()) - 1;
  }

  int add(int a, int b) { return binary(nodes[a].val + nodes[b].val, a, b, 1, 1); }
  int sub(int a, int b) { return binary(nodes[a].val - nodes[b].val, a, b, 1, -1); }
  int mul(int a, int b) {
    return binary(nodes[a].val * nodes[b].val, a, b, nodes[b].val, nodes[a].val);
  }
  int scale(int a, double c) { return unary(nodes[a].val * c, a, c); }
  int shift(int a, double c) { return unary(nodes[a].val + c, a, 1); }
  int square(int a) { return unary(sq(nodes[a].val), a, 2.0 * nodes[a].val); }
  // floored norm: value max(sqrt(x), c), partial 1/(2 max(sqrt(x), c)), so the
  // chain reproduces n / max(|n|, c) exactly
  int floored_sqrt(int a, double c) {
    const double r = std::max(std::sqrt(nodes[a].val), c);
    return unary(r, a, 0.5 / r);
  }

  std::vector<double> backward(int root) {
    std::vector<double> adj(nodes.size(), 0.0);
    adj[root] = 1.0;
    for (int i = root; i >= 0; --i) {
      const Node& n = nodes[i];
      const double u = adj[i];
      if (u == 0.0) continue;
      if (n.a >= 0) adj[n.a] += u * n.da;
      if (n.b >= 0) adj[n.b] += u * n.db;
    }
    return adj;
  }
};

}  // namespace

RegTerms regularize_tape(const Grid3& grid, const std::vector<int64_t>& vr,
                         GradAccum& g_eik, GradAccum& g_curv,
                         TapeStats* stats) {
  RegTerms terms;
  const int64_t n_int = count_interior(grid, vr);
  if (n_int == 0) return terms;
  const double inv_n = 1.0 / double(n_int);

  Tape tape;
  // leaves for the stencil closure of vr
  std::vector<int64_t> closure;
  closure.reserve(vr.size() * 7);
  for (int64_t v : vr) {
    const std::array<int, 3> idx = grid.unflat(v);
    if (!interior(grid, idx)) continue;
    closure.push_back(v);
    for (int a = 0; a < 3; ++a) {
      std::array<int, 3> nb = idx;
      nb[a] = idx[a] + 1;
      closure.push_back(grid.flat(nb));
      nb[a] = idx[a] - 1;
      closure.push_back(grid.flat(nb));
    }
  }
  std::sort(closure.begin(), closure.end());
  closure.erase(std::unique(closure.begin(), closure.end()), closure.end());

  std::vector<int> leaf_of(closure.size());
  for (size_t i = 0; i < closure.size(); ++i)
    leaf_of[i] = tape.leaf(grid.values[closure[i]]);
  auto leaf = [&](int64_t flat) {
    const size_t i =
        std::lower_bound(closure.begin(), closure.end(), flat) - closure.begin();
    return leaf_of[i];
  };

  int eik_sum = -1, curv_sum = -1;
  for (int64_t v : vr) {
    const std::array<int, 3> idx = grid.unflat(v);
    if (!interior(grid, idx)) continue;
    const int center = leaf(v);
    int norm2 = -1, curv_v = -1;
    for (int a = 0; a < 3; ++a) {
      std::array<int, 3> nb = idx;
      nb[a] = idx[a] + 1;
      const int up = leaf(grid.flat(nb));
      nb[a] = idx[a] - 1;
      const int dn = leaf(grid.flat(nb));

      const int diff = tape.scale(tape.sub(up, dn), 1.0 / (2.0 * grid.spacing));
      const int comp2 = tape.square(diff);
      norm2 = norm2 < 0 ? comp2 : tape.add(norm2, comp2);

      const int lap = tape.scale(
          tape.sub(tape.add(up, dn), tape.scale(center, 2.0)),
          1.0 / sq(grid.spacing));
      const int lap2 = tape.square(lap);
      curv_v = curv_v < 0 ? lap2 : tape.add(curv_v, lap2);
    }
    const int len = tape.floored_sqrt(norm2, 1e-12);
    const int eik_v = tape.square(tape.shift(len, -1.0));
    eik_sum = eik_sum < 0 ? eik_v : tape.add(eik_sum, eik_v);
    curv_sum = curv_sum < 0 ? curv_v : tape.add(curv_sum, curv_v);
  }

  const int l_eik = tape.scale(eik_sum, inv_n);
  const int l_curv = tape.scale(curv_sum, inv_n);
  terms.l_eik = tape.nodes[l_eik].val;
  terms.l_curv = tape.nodes[l_curv].val;

  std::vector<double> adj = tape.backward(l_eik);
  for (size_t i = 0; i < closure.size(); ++i)
    if (adj[leaf_of[i]] != 0.0) g_eik.add(closure[i], adj[leaf_of[i]]);
  adj = tape.backward(l_curv);
  for (size_t i = 0; i < closure.size(); ++i)
    if (adj[leaf_of[i]] != 0.0) g_curv.add(closure[i], adj[leaf_of[i]]);

  if (stats) {
    stats->nodes = tape.nodes.size();
    stats->bytes = tape.nodes.capacity() * sizeof(Tape::Node) +
                   2 * tape.nodes.size() * sizeof(double);
  }
  return terms;
}

}  // namespace voxrec
