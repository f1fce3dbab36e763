#include "voxrec/image.hpp"

#include <cctype>
#include <fstream>

namespace voxrec {

void write_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> row(size_t(3) * img.w);
  for (int y = 0; y < img.h; ++y) {
    const double* src = img.at(0, y);
    for (size_t i = 0; i < row.size(); ++i)
      row[i] = (unsigned char)(std::lround(std::clamp(src[i], 0.0, 1.0) * 255.0));
    f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  if (!f) throw IoError("write failed: " + path);
}

static int ppm_token(std::istream& f) {
  // skips whitespace and '#' comments between header fields
  int c;
  while ((c = f.get()) != EOF) {
    if (c == '#') {
      while ((c = f.get()) != EOF && c != '\n') {
      }
    } else if (!std::isspace(c)) {
      f.unget();
      int v;
      f >> v;
      return v;
    }
  }
  throw IoError("truncated ppm header");
}

Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  if (m0 != 'P' || m1 != '6') throw IoError("not a P6 ppm: " + path);
  const int w = ppm_token(f);
  const int h = ppm_token(f);
  const int maxv = ppm_token(f);
  if (w <= 0 || h <= 0 || maxv != 255) throw IoError("unsupported ppm: " + path);
  f.get();  // single whitespace before payload
  Image img(w, h);
  std::vector<unsigned char> row(size_t(3) * w);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size()));
    if (!f) throw IoError("truncated ppm payload: " + path);
    double* dst = img.at(0, y);
    for (size_t i = 0; i < row.size(); ++i) dst[i] = row[i] / 255.0;
  }
  return img;
}

void write_pfm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "PF\n" << img.w << " " << img.h << "\n-1.0\n";
  std::vector<float> row(size_t(3) * img.w);
  for (int y = img.h - 1; y >= 0; --y) {  // pfm rows run bottom-up
    const double* src = img.at(0, y);
    for (size_t i = 0; i < row.size(); ++i) row[i] = float(src[i]);
    f.write(reinterpret_cast<const char*>(row.data()),
            std::streamsize(row.size() * sizeof(float)));
  }
  if (!f) throw IoError("write failed: " + path);
}

Image read_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0;
  f >> magic >> w >> h >> scale;
  if (magic != "PF" || w <= 0 || h <= 0 || scale >= 0)
    throw IoError("unsupported pfm: " + path);
  f.get();
  Image img(w, h);
  std::vector<float> row(size_t(3) * w);
  for (int y = h - 1; y >= 0; --y) {
    f.read(reinterpret_cast<char*>(row.data()),
           std::streamsize(row.size() * sizeof(float)));
    if (!f) throw IoError("truncated pfm payload: " + path);
    double* dst = img.at(0, y);
    for (size_t i = 0; i < row.size(); ++i) dst[i] = row[i];
  }
  return img;
}

double psnr(const Image& a, const Image& b) {
  if (a.w != b.w || a.h != b.h) throw ShapeMismatch("psnr: image sizes differ");
  double mse = 0;
  for (size_t i = 0; i < a.pix.size(); ++i) mse += sq(a.pix[i] - b.pix[i]);
  mse /= double(a.pix.size());
  if (mse <= 0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

}  // namespace voxrec
