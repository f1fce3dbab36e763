#include "voxrec/radiance.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

namespace voxrec {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<int> level_resolutions(const RadianceConfig& cfg) {
  std::vector<int> res(cfg.levels);
  if (cfg.levels == 1) {
    res[0] = cfg.n_min;
    return res;
  }
  const double b = std::exp((std::log(double(cfg.n_max)) -
                             std::log(double(cfg.n_min))) /
                            (cfg.levels - 1));
  for (int l = 0; l < cfg.levels; ++l)
    res[l] = std::max(1, int(std::lround(cfg.n_min * std::pow(b, l))));
  return res;
}

// lattice coordinates of x at one level, clamped like grid lookups
void lattice_coords(const RadianceParams& p, const Vec3& x, int n,
                    std::array<int, 3>& base, Vec3& frac) {
  const Vec3 ext = p.box.extent();
  for (int a = 0; a < 3; ++a) {
    double q = (x[a] - p.box.lo[a]) / ext[a];
    if (q < -kGridClampTol || q > 1.0 + kGridClampTol)
      throw QueryOutsideGrid("shade point outside radiance field box");
    q = std::clamp(q, 0.0, 1.0) * n;
    base[a] = std::min(int(q), n - 1);
    frac[a] = q - base[a];
  }
}

}  // namespace

int hash_corner(int x, int y, int z, int table_size) {
  const uint32_t h = uint32_t(x) * 1u ^ uint32_t(y) * 2654435761u ^
                     uint32_t(z) * 805459861u;
  return int(h % uint32_t(table_size));
}

RadianceParams make_radiance(const Aabb<3>& box, uint64_t seed,
                             const RadianceConfig& cfg) {
  RadianceParams p;
  p.cfg = cfg;
  p.box = box;
  p.level_res = level_resolutions(cfg);
  p.tables.resize(size_t(cfg.levels) * cfg.table_size * cfg.features);
  Rng rng(mix_seed(seed, 0x7261, 0));
  for (float& t : p.tables) t = float(rng.uniform(-1e-4, 1e-4));

  p.decoder.assign(p.decoder_size(), 0.0f);
  auto he_fill = [&](int64_t off, int rows, int cols) {
    const double bound = std::sqrt(6.0 / cols);
    for (int64_t i = 0; i < int64_t(rows) * cols; ++i)
      p.decoder[off + i] = float(rng.uniform(-bound, bound));
  };
  he_fill(p.off_w1(), cfg.hidden, p.input_dim());
  he_fill(p.off_w2(), cfg.hidden, cfg.hidden);
  he_fill(p.off_w3(), 3, cfg.hidden);
  return p;
}

// writes per-level corner entries and weights when ctx slots are non-null
static void encode_impl(const RadianceParams& p, const Vec3& x,
                        double* features, int64_t* entries, double* weights) {
  const int F = p.cfg.features;
  for (int l = 0; l < p.cfg.levels; ++l) {
    std::array<int, 3> base;
    Vec3 frac;
    lattice_coords(p, x, p.level_res[l], base, frac);
    for (int f = 0; f < F; ++f) features[l * F + f] = 0.0;
    for (int c = 0; c < 8; ++c) {
      const int bx = c & 1, by = (c >> 1) & 1, bz = c >> 2;
      const double w = (bx ? frac[0] : 1.0 - frac[0]) *
                       (by ? frac[1] : 1.0 - frac[1]) *
                       (bz ? frac[2] : 1.0 - frac[2]);
      const int h = hash_corner(base[0] + bx, base[1] + by, base[2] + bz,
                                p.cfg.table_size);
      const int64_t e = p.table_entry(l, h);
      for (int f = 0; f < F; ++f)
        features[l * F + f] += w * double(p.tables[e + f]);
      if (entries) entries[l * 8 + c] = e;
      if (weights) weights[l * 8 + c] = w;
    }
  }
}

void encode(const RadianceParams& p, const Vec3& x, double* features) {
  encode_impl(p, x, features, nullptr, nullptr);
}

Vec3 shade(const RadianceParams& p, const Vec3& x, const Vec3& v, const Vec3& n,
           ShadeContext& ctx) {
  const int din = p.input_dim();
  const int hid = p.cfg.hidden;
  ctx.entry.resize(size_t(p.cfg.levels) * 8);
  ctx.weight.resize(size_t(p.cfg.levels) * 8);
  ctx.input.resize(din);
  ctx.h1.assign(hid, 0.0);
  ctx.h2.assign(hid, 0.0);

  encode_impl(p, x, ctx.input.data(), ctx.entry.data(), ctx.weight.data());
  double* in = ctx.input.data();
  int k = p.feature_dim();
  for (int pw = 1; pw <= 4; ++pw)
    for (int a = 0; a < 3; ++a) in[k++] = std::pow(v[a], pw);
  for (int a = 0; a < 3; ++a) in[k++] = n[a];

  const float* d = p.decoder.data();
  for (int i = 0; i < hid; ++i) {
    double z = double(d[p.off_b1() + i]);
    const float* row = d + p.off_w1() + int64_t(i) * din;
    for (int j = 0; j < din; ++j) z += double(row[j]) * in[j];
    ctx.h1[i] = z > 0 ? z : 0.0;
  }
  for (int i = 0; i < hid; ++i) {
    double z = double(d[p.off_b2() + i]);
    const float* row = d + p.off_w2() + int64_t(i) * hid;
    for (int j = 0; j < hid; ++j) z += double(row[j]) * ctx.h1[j];
    ctx.h2[i] = z > 0 ? z : 0.0;
  }
  for (int c = 0; c < 3; ++c) {
    double z = double(d[p.off_b3() + c]);
    const float* row = d + p.off_w3() + int64_t(c) * hid;
    for (int j = 0; j < hid; ++j) z += double(row[j]) * ctx.h2[j];
    ctx.color[c] = sigmoid(z);
  }
  return ctx.color;
}

Vec3 shade(const RadianceParams& p, const Vec3& x, const Vec3& v,
           const Vec3& n) {
  ShadeContext ctx;
  return shade(p, x, v, n, ctx);
}

Vec3 backprop_shade(const RadianceParams& p, const ShadeContext& ctx,
                    const Vec3& d_color, GradAccum& g_tables,
                    GradAccum& g_decoder, bool normal_grad) {
  const int din = p.input_dim();
  const int hid = p.cfg.hidden;
  const int F = p.cfg.features;
  const float* d = p.decoder.data();

  std::array<double, 3> d3;
  for (int c = 0; c < 3; ++c)
    d3[c] = d_color[c] * ctx.color[c] * (1.0 - ctx.color[c]);

  std::vector<double> dh2(hid, 0.0);
  for (int c = 0; c < 3; ++c) {
    if (d3[c] == 0.0) continue;
    g_decoder.add(p.off_b3() + c, d3[c]);
    const float* row = d + p.off_w3() + int64_t(c) * hid;
    for (int j = 0; j < hid; ++j) {
      g_decoder.add(p.off_w3() + int64_t(c) * hid + j, d3[c] * ctx.h2[j]);
      dh2[j] += d3[c] * double(row[j]);
    }
  }

  std::vector<double> dh1(hid, 0.0);
  for (int i = 0; i < hid; ++i) {
    if (ctx.h2[i] <= 0.0) continue;  // ReLU gate
    const double g = dh2[i];
    if (g == 0.0) continue;
    g_decoder.add(p.off_b2() + i, g);
    const float* row = d + p.off_w2() + int64_t(i) * hid;
    for (int j = 0; j < hid; ++j) {
      g_decoder.add(p.off_w2() + int64_t(i) * hid + j, g * ctx.h1[j]);
      dh1[j] += g * double(row[j]);
    }
  }

  std::vector<double> din_grad(din, 0.0);
  for (int i = 0; i < hid; ++i) {
    if (ctx.h1[i] <= 0.0) continue;
    const double g = dh1[i];
    if (g == 0.0) continue;
    g_decoder.add(p.off_b1() + i, g);
    const float* row = d + p.off_w1() + int64_t(i) * din;
    for (int j = 0; j < din; ++j) {
      g_decoder.add(p.off_w1() + int64_t(i) * din + j, g * ctx.input[j]);
      din_grad[j] += g * double(row[j]);
    }
  }

  for (int l = 0; l < p.cfg.levels; ++l)
    for (int c = 0; c < 8; ++c) {
      const double w = ctx.weight[l * 8 + c];
      if (w == 0.0) continue;
      const int64_t e = ctx.entry[l * 8 + c];
      for (int f = 0; f < F; ++f) {
        const double g = w * din_grad[l * F + f];
        if (g != 0.0) g_tables.add(e + f, g);
      }
    }

  Vec3 dn = make_vec3(0, 0, 0);
  if (normal_grad)
    for (int a = 0; a < 3; ++a) dn[a] = din_grad[din - 3 + a];
  return dn;
}

void save_radiance(const RadianceParams& p, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open " + path + " for writing");
  auto put = [&](const void* buf, size_t n) {
    if (std::fwrite(buf, 1, n, f) != n) {
      std::fclose(f);
      throw IoError("short write to " + path);
    }
  };
  put("RADF", 4);
  const uint32_t dims[6] = {uint32_t(p.cfg.levels),  uint32_t(p.cfg.table_size),
                            uint32_t(p.cfg.features), uint32_t(p.cfg.n_min),
                            uint32_t(p.cfg.n_max),    uint32_t(p.cfg.hidden)};
  put(dims, sizeof(dims));
  double box[6] = {p.box.lo[0], p.box.lo[1], p.box.lo[2],
                   p.box.hi[0], p.box.hi[1], p.box.hi[2]};
  put(box, sizeof(box));
  put(p.tables.data(), p.tables.size() * sizeof(float));
  put(p.decoder.data(), p.decoder.size() * sizeof(float));
  std::fclose(f);
}

RadianceParams load_radiance(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  auto get = [&](void* buf, size_t n) {
    if (std::fread(buf, 1, n, f) != n) {
      std::fclose(f);
      throw IoError("truncated radiance file " + path);
    }
  };
  char magic[4];
  get(magic, 4);
  if (std::memcmp(magic, "RADF", 4) != 0) {
    std::fclose(f);
    throw IoError(path + " is not a radiance checkpoint");
  }
  uint32_t dims[6];
  get(dims, sizeof(dims));
  RadianceParams p;
  p.cfg.levels = int(dims[0]);
  p.cfg.table_size = int(dims[1]);
  p.cfg.features = int(dims[2]);
  p.cfg.n_min = int(dims[3]);
  p.cfg.n_max = int(dims[4]);
  p.cfg.hidden = int(dims[5]);
  if (p.cfg.levels < 1 || p.cfg.levels > 64 || p.cfg.table_size < 1 ||
      p.cfg.features < 1 || p.cfg.hidden < 1) {
    std::fclose(f);
    throw IoError(path + " has an implausible header");
  }
  double box[6];
  get(box, sizeof(box));
  p.box.lo = make_vec3(box[0], box[1], box[2]);
  p.box.hi = make_vec3(box[3], box[4], box[5]);
  p.level_res = level_resolutions(p.cfg);
  p.tables.resize(size_t(p.cfg.levels) * p.cfg.table_size * p.cfg.features);
  p.decoder.resize(p.decoder_size());
  get(p.tables.data(), p.tables.size() * sizeof(float));
  get(p.decoder.data(), p.decoder.size() * sizeof(float));
  std::fclose(f);
  return p;
}

}  // namespace voxrec
