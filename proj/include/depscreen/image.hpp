#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "depscreen/common.hpp"

namespace depscreen {

// Interleaved RGB image, doubles in [0,1], row-major.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // height*width*3

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<size_t>(h) * w * 3, fill) {
    if (h <= 0 || w <= 0) throw InvalidInputError("image dimensions must be positive");
  }

  bool empty() const { return height == 0 || width == 0; }

  double& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }

  void set_pixel(int y, int x, double r, double g, double b) {
    at(y, x, 0) = r;
    at(y, x, 1) = g;
    at(y, x, 2) = b;
  }
};

// Per-pixel boolean companion (e.g. which pixels of a rotated frame were
// filled from padding).
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }

  bool any() const {
    return std::any_of(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; });
  }
};

enum class PadPolicy { replicate, reflect };

namespace detail {

inline int pad_index(int i, int n, PadPolicy policy) {
  if (i >= 0 && i < n) return i;
  if (policy == PadPolicy::replicate) return std::clamp(i, 0, n - 1);
  // reflect with edge repetition: -1 -> 0, -2 -> 1, n -> n-1, n+1 -> n-2
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

}  // namespace detail

// Weights below this never flag padding: rotations by exact multiples of
// 90 degrees produce ~1e-17 residual weights on neighbor pixels.
constexpr double kPadWeightEps = 1e-12;

// Bilinear sample at continuous (x, y); pixel centers sit on integer
// coordinates. `padded` (optional) is set when any contributing sample
// with material weight lies outside the image bounds.
inline std::array<double, 3> bilinear_sample(const Image& img, double x, double y,
                                             PadPolicy policy, bool* padded = nullptr) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;

  const double wx[2] = {1.0 - fx, fx};
  const double wy[2] = {1.0 - fy, fy};

  std::array<double, 3> out{0.0, 0.0, 0.0};
  bool touched = false;
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const double w = wy[dy] * wx[dx];
      if (w == 0.0) continue;
      const int sy = y0 + dy;
      const int sx = x0 + dx;
      const bool inside = sx >= 0 && sx < img.width && sy >= 0 && sy < img.height;
      if (!inside && w > kPadWeightEps) touched = true;
      const int cy = detail::pad_index(sy, img.height, policy);
      const int cx = detail::pad_index(sx, img.width, policy);
      for (int c = 0; c < 3; ++c) out[c] += w * img.at(cy, cx, c);
    }
  }
  if (padded) *padded = touched;
  return out;
}

inline Image hflip(const Image& img) {
  if (img.empty()) throw InvalidInputError("hflip: empty image");
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    }
  }
  return out;
}

inline Image clamp01(Image img) {
  for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
  return img;
}

// --- PPM (binary P6, 8-bit) ------------------------------------------------
//
// Aligned crops and synthetic frames are stored as P6 PPM: lossless for
// 8-bit data and dependency-free. Values are quantized with round(v*255).

inline void write_ppm(const Image& img, const std::filesystem::path& path) {
  if (img.empty()) throw InvalidInputError("write_ppm: empty image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
        row[static_cast<size_t>(x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw IoError("write failed: " + path.string());
}

namespace detail {

inline int ppm_read_token(std::istream& in) {
  // skips whitespace and '#' comments
  while (true) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(ch)) {
      in.get();
      continue;
    }
    break;
  }
  int value = -1;
  in >> value;
  return value;
}

}  // namespace detail

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw IoError("not a binary PPM (P6): " + path.string());
  const int w = detail::ppm_read_token(in);
  const int h = detail::ppm_read_token(in);
  const int maxval = detail::ppm_read_token(in);
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw IoError("unsupported PPM header in " + path.string());
  }
  in.get();  // single whitespace after maxval
  Image img(h, w);
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), row.size());
    if (!in) throw IoError("truncated PPM: " + path.string());
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = row[static_cast<size_t>(x) * 3 + c] / 255.0;
      }
    }
  }
  return img;
}

}  // namespace depscreen
