#pragma once

#include <algorithm>
#include <random>

#include "depscreen/common.hpp"
#include "depscreen/image.hpp"

// Training-time augmentation: random horizontal flips plus brightness /
// contrast / saturation jitter. Deliberately nothing else — no rotations,
// no vertical flips, no extra images; rotation would collapse the two
// alignment streams into one.

namespace depscreen {

struct FactorRange {
  double lo = 1.0;
  double hi = 1.0;
};

struct AugmentPolicy {
  double flip_probability = 0.5;
  FactorRange brightness{0.8, 1.2};
  FactorRange contrast{0.8, 1.2};
  FactorRange saturation{0.8, 1.2};
  std::uint64_t seed = 0;

  void validate() const {
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
      throw ParameterError("flip_probability must lie in [0,1]");
    }
    for (const FactorRange* r : {&brightness, &contrast, &saturation}) {
      if (!(r->lo > 0.0) || !(r->hi >= r->lo)) {
        throw ParameterError("jitter range bounds must be positive and ordered");
      }
      if (r->lo > 1.0 || r->hi < 1.0) {
        throw ParameterError("jitter ranges must contain 1.0");
      }
    }
  }
};

constexpr double kLumR = 0.299, kLumG = 0.587, kLumB = 0.114;

// Fixed formula, applied in this order:
//   brightness: v *= b
//   contrast:   v = mean_luminance + c * (v - mean_luminance)
//               (mean luminance of the brightness-adjusted image)
//   saturation: v = pixel_gray + s * (v - pixel_gray)
// with Rec.601 luminance weights and a final clamp to [0,1]. Factors must
// be nonnegative; 1.0 is the identity for each.
inline Image color_jitter(const Image& image, double b, double c, double s) {
  if (image.empty()) throw InvalidInputError("color_jitter: empty image");
  if (!(b >= 0.0) || !(c >= 0.0) || !(s >= 0.0)) {
    throw ParameterError("jitter factors must be nonnegative");
  }
  Image out = image;
  const bool identity_b = b == 1.0, identity_c = c == 1.0, identity_s = s == 1.0;
  if (identity_b && identity_c && identity_s) return out;

  if (!identity_b) {
    for (double& v : out.data) v *= b;
  }
  if (!identity_c) {
    double lum_sum = 0.0;
    const std::int64_t pixels = static_cast<std::int64_t>(out.height) * out.width;
    for (std::int64_t i = 0; i < pixels; ++i) {
      lum_sum += kLumR * out.data[i * 3] + kLumG * out.data[i * 3 + 1] +
                 kLumB * out.data[i * 3 + 2];
    }
    const double mean_lum = lum_sum / pixels;
    for (double& v : out.data) v = mean_lum + c * (v - mean_lum);
  }
  if (!identity_s) {
    const std::int64_t pixels = static_cast<std::int64_t>(out.height) * out.width;
    for (std::int64_t i = 0; i < pixels; ++i) {
      double* p = &out.data[i * 3];
      const double gray = kLumR * p[0] + kLumG * p[1] + kLumB * p[2];
      p[0] = gray + s * (p[0] - gray);
      p[1] = gray + s * (p[1] - gray);
      p[2] = gray + s * (p[2] - gray);
    }
  }
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

// One sampled transform: color jitter followed by an optional mirror.
struct TransformRecord {
  bool flip = false;
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;

  bool is_identity() const {
    return !flip && brightness == 1.0 && contrast == 1.0 && saturation == 1.0;
  }
};

// Draw order is fixed (flip, brightness, contrast, saturation) so seeded
// replay reproduces the exact transform sequence.
inline TransformRecord sample_augmentation(const AugmentPolicy& policy,
                                           std::mt19937_64& rng) {
  policy.validate();
  TransformRecord record;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  record.flip = unit(rng) < policy.flip_probability;
  auto draw = [&rng](const FactorRange& r) {
    if (r.lo == r.hi) return r.lo;
    std::uniform_real_distribution<double> dist(r.lo, r.hi);
    return dist(rng);
  };
  record.brightness = draw(policy.brightness);
  record.contrast = draw(policy.contrast);
  record.saturation = draw(policy.saturation);
  return record;
}

inline Image apply_transform(const Image& image, const TransformRecord& record) {
  Image out = color_jitter(image, record.brightness, record.contrast, record.saturation);
  if (record.flip) out = hflip(out);
  return out;
}

}  // namespace depscreen
