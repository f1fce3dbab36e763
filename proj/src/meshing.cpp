#include "voxrec/meshing.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace voxrec {

double TriangleMesh::area() const {
  double a = 0;
  for (const std::array<int, 3>& t : tris)
    a += 0.5 * norm(cross(vertices[t[1]] - vertices[t[0]],
                          vertices[t[2]] - vertices[t[0]]));
  return a;
}

// Corner layout: 0..3 on the bottom face (y=0) going around, 4..7 above.
static const int kCornerOffset[8][3] = {
    {0, 0, 0}, {1, 0, 0}, {1, 0, 1}, {0, 0, 1},
    {0, 1, 0}, {1, 1, 0}, {1, 1, 1}, {0, 1, 1},
};

static const int kEdgeCorner[12][2] = {
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
    {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
};

#include "mc_tables.inc"

TriangleMesh marching_cubes(const Grid3& grid, double level, int threads) {
  const int cx = grid.res[0] - 1, cy = grid.res[1] - 1, cz = grid.res[2] - 1;
  const int64_t ncells = int64_t(cx) * cy * cz;

  std::vector<uint8_t> config(ncells);
#pragma omp parallel for schedule(static) num_threads(threads > 0 ? threads : omp_get_max_threads())
  for (int64_t cell = 0; cell < ncells; ++cell) {
    const int i = int(cell % cx);
    const int j = int((cell / cx) % cy);
    const int k = int(cell / (int64_t(cx) * cy));
    int c = 0;
    for (int v = 0; v < 8; ++v) {
      const std::array<int, 3> idx = {i + kCornerOffset[v][0],
                                      j + kCornerOffset[v][1],
                                      k + kCornerOffset[v][2]};
      if (grid.at(idx) < level) c |= 1 << v;
    }
    config[cell] = uint8_t(c);
  }

  TriangleMesh mesh;
  std::unordered_map<int64_t, int> edge_vertex;
  std::array<int64_t, 8> corner_flat;
  std::array<double, 8> corner_val;
  std::array<Vec3, 8> corner_pos;

  // serial emit in global cell order keeps vertex ids deterministic
  for (int64_t cell = 0; cell < ncells; ++cell) {
    const int c = config[cell];
    if (kEdgeTable[c] == 0) continue;
    const int i = int(cell % cx);
    const int j = int((cell / cx) % cy);
    const int k = int(cell / (int64_t(cx) * cy));
    for (int v = 0; v < 8; ++v) {
      const std::array<int, 3> idx = {i + kCornerOffset[v][0],
                                      j + kCornerOffset[v][1],
                                      k + kCornerOffset[v][2]};
      corner_flat[v] = grid.flat(idx);
      corner_val[v] = grid.at(idx);
      corner_pos[v] = grid.vertex_pos(idx);
    }
    int edge_ids[12];
    for (int e = 0; e < 12; ++e) {
      if (!(kEdgeTable[c] & (1 << e))) continue;
      int a = kEdgeCorner[e][0], b = kEdgeCorner[e][1];
      if (corner_flat[a] > corner_flat[b]) std::swap(a, b);
      int axis = 0;
      for (int d = 0; d < 3; ++d)
        if (kCornerOffset[kEdgeCorner[e][0]][d] !=
            kCornerOffset[kEdgeCorner[e][1]][d])
          axis = d;
      const int64_t key = corner_flat[a] * 3 + axis;
      auto it = edge_vertex.find(key);
      if (it == edge_vertex.end()) {
        const double t =
            (level - corner_val[a]) / (corner_val[b] - corner_val[a]);
        mesh.vertices.push_back(corner_pos[a] +
                                (corner_pos[b] - corner_pos[a]) * t);
        it = edge_vertex.emplace(key, int(mesh.vertices.size()) - 1).first;
      }
      edge_ids[e] = it->second;
    }
    for (int t = 0; kTriTable[c][t] != -1; t += 3) {
      const int a = edge_ids[kTriTable[c][t]];
      const int b = edge_ids[kTriTable[c][t + 1]];
      const int d = edge_ids[kTriTable[c][t + 2]];
      const Vec3 n = cross(mesh.vertices[b] - mesh.vertices[a],
                           mesh.vertices[d] - mesh.vertices[a]);
      if (0.5 * norm(n) < 1e-14) continue;
      mesh.tris.push_back({a, b, d});
    }
  }
  return mesh;
}

std::vector<Vec3> sample_surface(const TriangleMesh& mesh, int n,
                                 uint64_t seed) {
  if (n == 0) return {};
  if (mesh.tris.empty()) throw EmptyMesh("cannot sample an empty mesh");
  std::vector<double> cdf(mesh.tris.size());
  double total = 0;
  for (size_t t = 0; t < mesh.tris.size(); ++t) {
    const std::array<int, 3>& tri = mesh.tris[t];
    total += 0.5 * norm(cross(mesh.vertices[tri[1]] - mesh.vertices[tri[0]],
                              mesh.vertices[tri[2]] - mesh.vertices[tri[0]]));
    cdf[t] = total;
  }
  Rng rng(seed);
  std::vector<Vec3> out;
  out.reserve(n);
  for (int s = 0; s < n; ++s) {
    const double u = rng.uniform() * total;
    const size_t t = std::min(
        size_t(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin()),
        mesh.tris.size() - 1);
    const std::array<int, 3>& tri = mesh.tris[t];
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    out.push_back(mesh.vertices[tri[0]] * (1.0 - r1) +
                  mesh.vertices[tri[1]] * (r1 * (1.0 - r2)) +
                  mesh.vertices[tri[2]] * (r1 * r2));
  }
  return out;
}

std::vector<Vec3> sample_sphere_surface(const Vec3& center, double radius,
                                        int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> out;
  out.reserve(n);
  while (int(out.size()) < n) {
    // Box-Muller pairs; a fresh draw replaces the rare near-zero vector
    const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform(),
                 u4 = rng.uniform();
    const double r1 = std::sqrt(-2.0 * std::log(std::max(u1, 1e-300)));
    const double r2 = std::sqrt(-2.0 * std::log(std::max(u3, 1e-300)));
    Vec3 g = make_vec3(r1 * std::cos(2 * M_PI * u2),
                       r1 * std::sin(2 * M_PI * u2),
                       r2 * std::cos(2 * M_PI * u4));
    const double len = norm(g);
    if (len < 1e-12) continue;
    out.push_back(center + g * (radius / len));
  }
  return out;
}

namespace {

// Median-split kd-tree over a reordered copy of the points.
struct KdTree {
  struct Node {
    double split = 0;
    int axis = -1;  // -1 marks a leaf
    int left = -1, right = -1;
    int begin = 0, end = 0;
  };
  std::vector<Vec3> pts;
  std::vector<Node> nodes;

  explicit KdTree(const std::vector<Vec3>& points) : pts(points) {
    nodes.reserve(2 * pts.size() / 8 + 2);
    build(0, int(pts.size()), 0);
  }

  int build(int begin, int end, int depth) {
    const int id = int(nodes.size());
    nodes.push_back({});
    if (end - begin <= 8) {
      nodes[id].begin = begin;
      nodes[id].end = end;
      return id;
    }
    const int axis = depth % 3;
    const int mid = (begin + end) / 2;
    std::nth_element(pts.begin() + begin, pts.begin() + mid,
                     pts.begin() + end,
                     [axis](const Vec3& a, const Vec3& b) {
                       return a[axis] < b[axis];
                     });
    nodes[id].axis = axis;
    nodes[id].split = pts[mid][axis];
    const int l = build(begin, mid, depth + 1);
    const int r = build(mid, end, depth + 1);
    nodes[id].left = l;
    nodes[id].right = r;
    return id;
  }

  void nearest(const Vec3& q, int id, double& best2) const {
    const Node& n = nodes[id];
    if (n.axis < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const Vec3 d = pts[i] - q;
        best2 = std::min(best2, dot(d, d));
      }
      return;
    }
    const double delta = q[n.axis] - n.split;
    const int first = delta < 0 ? n.left : n.right;
    const int second = delta < 0 ? n.right : n.left;
    nearest(q, first, best2);
    if (delta * delta < best2) nearest(q, second, best2);
  }

  double nearest_dist(const Vec3& q) const {
    double best2 = std::numeric_limits<double>::infinity();
    nearest(q, 0, best2);
    return std::sqrt(best2);
  }
};

double mean_nearest(const std::vector<Vec3>& from, const KdTree& to) {
  double sum = 0;
  for (const Vec3& p : from) sum += to.nearest_dist(p);
  return sum / double(from.size());
}

}  // namespace

double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty()) throw EmptySet("chamfer needs two nonempty sets");
  const KdTree ta(a), tb(b);
  return 0.5 * (mean_nearest(a, tb) + mean_nearest(b, ta));
}

void save_ply(const TriangleMesh& mesh, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "ply\nformat ascii 1.0\n";
  f << "element vertex " << mesh.vertices.size() << "\n";
  f << "property float x\nproperty float y\nproperty float z\n";
  f << "element face " << mesh.tris.size() << "\n";
  f << "property list uchar int vertex_indices\nend_header\n";
  char line[128];
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(line, sizeof line, "%.9g %.9g %.9g\n", float(v[0]),
                  float(v[1]), float(v[2]));
    f << line;
  }
  for (const std::array<int, 3>& t : mesh.tris)
    f << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
  if (!f) throw IoError("write failed: " + path);
}

TriangleMesh load_ply(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::string line;
  size_t nv = 0, nf = 0;
  bool header_done = false;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "element") {
      std::string what;
      size_t count;
      ss >> what >> count;
      if (what == "vertex") nv = count;
      if (what == "face") nf = count;
    } else if (tok == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) throw IoError("not a ply file: " + path);
  TriangleMesh mesh;
  mesh.vertices.resize(nv);
  for (size_t i = 0; i < nv; ++i) {
    if (!(f >> mesh.vertices[i][0] >> mesh.vertices[i][1] >>
          mesh.vertices[i][2]))
      throw IoError("truncated ply vertices: " + path);
  }
  mesh.tris.resize(nf);
  for (size_t i = 0; i < nf; ++i) {
    int k = 0;
    if (!(f >> k) || k != 3)
      throw IoError("only triangle faces are supported: " + path);
    if (!(f >> mesh.tris[i][0] >> mesh.tris[i][1] >> mesh.tris[i][2]))
      throw IoError("truncated ply faces: " + path);
    for (int v : mesh.tris[i])
      if (v < 0 || size_t(v) >= nv) throw IoError("face index out of range");
  }
  return mesh;
}

}  // namespace voxrec
