#pragma once

#include <string>
#include <vector>

#include "voxrec/core.hpp"

namespace voxrec {

// RGB image, row-major from the top-left, values in [0,1].
struct Image {
  int w = 0, h = 0;
  std::vector<double> pix;  // 3 per pixel

  Image() = default;
  Image(int w_, int h_) : w(w_), h(h_), pix(size_t(3) * w_ * h_, 0.0) {}

  double* at(int x, int y) { return &pix[3 * (size_t(y) * w + x)]; }
  const double* at(int x, int y) const { return &pix[3 * (size_t(y) * w + x)]; }

  void set(int x, int y, const Vec3& c) {
    double* p = at(x, y);
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
  Vec3 get(int x, int y) const {
    const double* p = at(x, y);
    return make_vec3(p[0], p[1], p[2]);
  }
};

// 8-bit binary PPM (P6). Values are clamped to [0,1] and rounded.
void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

// Binary float PFM ("PF", little-endian, bottom-up rows), lossless.
void write_pfm(const Image& img, const std::string& path);
Image read_pfm(const std::string& path);

// Peak signal-to-noise ratio in dB over all channels.
double psnr(const Image& a, const Image& b);

}  // namespace voxrec
