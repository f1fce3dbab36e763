#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxrec/core.hpp"
#include "voxrec/grid.hpp"

namespace voxrec {

// Multi-resolution hashed feature tables feeding a small fully connected
// decoder. Colors depend on position (through the tables), view direction and
// surface normal; geometry only enters through the normal argument, so the
// backward pass can cut that path with a switch.
struct RadianceConfig {
  int levels = 8;
  int table_size = 1 << 14;
  int features = 2;
  int n_min = 16;
  int n_max = 256;
  int hidden = 32;
};

struct RadianceParams {
  RadianceConfig cfg;
  Aabb<3> box;
  std::vector<int> level_res;
  std::vector<float> tables;   // levels * table_size * features
  std::vector<float> decoder;  // see offset helpers below

  int feature_dim() const { return cfg.levels * cfg.features; }
  // hash features + view-direction component powers 1..4 + raw normal
  int input_dim() const { return feature_dim() + 12 + 3; }

  // decoder layout: W1 (hidden x in) b1 | W2 (hidden x hidden) b2 | W3 (3 x
  // hidden) b3, each weight matrix row-major
  int64_t off_w1() const { return 0; }
  int64_t off_b1() const { return int64_t(cfg.hidden) * input_dim(); }
  int64_t off_w2() const { return off_b1() + cfg.hidden; }
  int64_t off_b2() const { return off_w2() + int64_t(cfg.hidden) * cfg.hidden; }
  int64_t off_w3() const { return off_b2() + cfg.hidden; }
  int64_t off_b3() const { return off_w3() + int64_t(3) * cfg.hidden; }
  int64_t decoder_size() const { return off_b3() + 3; }
  int64_t table_entry(int level, int hash) const {
    return (int64_t(level) * cfg.table_size + hash) * cfg.features;
  }
};

RadianceParams make_radiance(const Aabb<3>& box, uint64_t seed,
                             const RadianceConfig& cfg = {});

// spatial-hash of one lattice corner, in [0, table_size)
int hash_corner(int x, int y, int z, int table_size);

// trilinear feature lookup; features must hold feature_dim() doubles
void encode(const RadianceParams& p, const Vec3& x, double* features);

// forward state retained for the backward pass
struct ShadeContext {
  std::vector<int64_t> entry;   // levels*8 table entry bases
  std::vector<double> weight;   // levels*8 interpolation weights
  std::vector<double> input;    // input_dim
  std::vector<double> h1, h2;   // post-activation hidden layers
  Vec3 color;
};

Vec3 shade(const RadianceParams& p, const Vec3& x, const Vec3& v,
           const Vec3& n);
Vec3 shade(const RadianceParams& p, const Vec3& x, const Vec3& v,
           const Vec3& n, ShadeContext& ctx);

// scatters into g_tables (table entry indices) and g_decoder (decoder
// offsets); returns d/dn, or zero when normal_grad is off
Vec3 backprop_shade(const RadianceParams& p, const ShadeContext& ctx,
                    const Vec3& d_color, GradAccum& g_tables,
                    GradAccum& g_decoder, bool normal_grad = true);

void save_radiance(const RadianceParams& p, const std::string& path);
RadianceParams load_radiance(const std::string& path);

}  // namespace voxrec
