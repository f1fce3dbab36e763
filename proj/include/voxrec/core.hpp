#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace voxrec {

// ---------------------------------------------------------------------------
// Small fixed-size vector. All query/gradient math runs in double even though
// grids and parameter tables store float.
// ---------------------------------------------------------------------------
template <int D>
struct Vec {
  std::array<double, D> v{};

  Vec() = default;
  explicit Vec(double fill) { v.fill(fill); }

  double& operator[](int i) { return v[i]; }
  double operator[](int i) const { return v[i]; }

  Vec operator+(const Vec& o) const {
    Vec r;
    for (int i = 0; i < D; ++i) r.v[i] = v[i] + o.v[i];
    return r;
  }
  Vec operator-(const Vec& o) const {
    Vec r;
    for (int i = 0; i < D; ++i) r.v[i] = v[i] - o.v[i];
    return r;
  }
  Vec operator*(double s) const {
    Vec r;
    for (int i = 0; i < D; ++i) r.v[i] = v[i] * s;
    return r;
  }
  Vec operator/(double s) const { return *this * (1.0 / s); }
  Vec operator-() const { return *this * -1.0; }
  Vec& operator+=(const Vec& o) {
    for (int i = 0; i < D; ++i) v[i] += o.v[i];
    return *this;
  }
  Vec& operator-=(const Vec& o) {
    for (int i = 0; i < D; ++i) v[i] -= o.v[i];
    return *this;
  }
  Vec& operator*=(double s) {
    for (int i = 0; i < D; ++i) v[i] *= s;
    return *this;
  }
  bool operator==(const Vec&) const = default;
};

template <int D>
inline Vec<D> operator*(double s, const Vec<D>& a) {
  return a * s;
}

template <int D>
inline double dot(const Vec<D>& a, const Vec<D>& b) {
  double s = 0;
  for (int i = 0; i < D; ++i) s += a[i] * b[i];
  return s;
}

template <int D>
inline double norm(const Vec<D>& a) {
  return std::sqrt(dot(a, a));
}

template <int D>
inline Vec<D> normalized(const Vec<D>& a) {
  return a / norm(a);
}

inline Vec<3> cross(const Vec<3>& a, const Vec<3>& b) {
  Vec<3> r;
  r[0] = a[1] * b[2] - a[2] * b[1];
  r[1] = a[2] * b[0] - a[0] * b[2];
  r[2] = a[0] * b[1] - a[1] * b[0];
  return r;
}

using Vec2 = Vec<2>;
using Vec3 = Vec<3>;

inline Vec3 make_vec3(double x, double y, double z) {
  Vec3 r;
  r[0] = x;
  r[1] = y;
  r[2] = z;
  return r;
}

inline Vec2 make_vec2(double x, double y) {
  Vec2 r;
  r[0] = x;
  r[1] = y;
  return r;
}

// ---------------------------------------------------------------------------
// Axis-aligned box
// ---------------------------------------------------------------------------
template <int D>
struct Aabb {
  Vec<D> lo, hi;

  bool contains(const Vec<D>& p, double tol = 0.0) const {
    for (int i = 0; i < D; ++i)
      if (p[i] < lo[i] - tol || p[i] > hi[i] + tol) return false;
    return true;
  }
  Vec<D> center() const { return (lo + hi) * 0.5; }
  Vec<D> extent() const { return hi - lo; }
  double max_extent() const {
    double m = 0;
    for (int i = 0; i < D; ++i) m = std::max(m, hi[i] - lo[i]);
    return m;
  }
};

using Aabb2 = Aabb<2>;
using Aabb3 = Aabb<3>;

// Slab intersection. Returns (enter, exit) with enter clamped to >= 0,
// or nothing if the ray misses the box.
template <int D>
inline std::optional<std::pair<double, double>> intersect_aabb(
    const Vec<D>& origin, const Vec<D>& dir, const Aabb<D>& box) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < D; ++i) {
    if (dir[i] == 0.0) {
      if (origin[i] < box.lo[i] || origin[i] > box.hi[i]) return std::nullopt;
      continue;
    }
    double inv = 1.0 / dir[i];
    double a = (box.lo[i] - origin[i]) * inv;
    double b = (box.hi[i] - origin[i]) * inv;
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  if (t1 <= t0) return std::nullopt;
  return std::make_pair(t0, t1);
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------
struct QueryOutsideGrid : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GridTooSmall : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidResolution : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NoIntersection : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FaceOnBoundary : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyMesh : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptySet : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG (splitmix64 core). Single u64 of state, so checkpoints
// and derived per-ray streams are trivial and platform independent.
// ---------------------------------------------------------------------------
struct Rng {
  uint64_t state = 0x9e3779b97f4a7c15ull;

  Rng() = default;
  explicit Rng(uint64_t seed) : state(seed + 0x9e3779b97f4a7c15ull) {}

  uint64_t next_u64() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  // uniform integer in [0, n)
  uint64_t below(uint64_t n) { return next_u64() % n; }
};

// Stream derivation for parallel work: mixes (seed, a, b) into a fresh seed
// so per-ray or per-step streams are independent of thread scheduling.
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0) {
  uint64_t h = seed ^ 0x2545f4914f6cdd1dull;
  auto mix = [&h](uint64_t x) {
    h ^= x + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
  };
  mix(a);
  mix(b);
  return h;
}

inline double sq(double x) { return x * x; }

}  // namespace voxrec
