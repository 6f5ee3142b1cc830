#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "depscreen/common.hpp"
#include "depscreen/detect.hpp"
#include "depscreen/geometry.hpp"
#include "depscreen/image.hpp"

namespace depscreen {

enum class AlignmentMode { pose_dependent, pose_independent };

inline const char* alignment_mode_name(AlignmentMode mode) {
  return mode == AlignmentMode::pose_dependent ? "pose_dependent" : "pose_independent";
}

inline AlignmentMode alignment_mode_from_name(const std::string& name) {
  if (name == "pose_dependent") return AlignmentMode::pose_dependent;
  if (name == "pose_independent") return AlignmentMode::pose_independent;
  throw ParameterError("unknown alignment mode: " + name);
}

struct AlignedFace {
  Image pixels;  // target x target x 3, values in [0,1]
  AlignmentMode mode = AlignmentMode::pose_independent;
  int source_frame_index = 0;
  Angle applied_angle;               // rotation applied to the source frame
  BoundingBox crop_box;              // in the rotated frame for pose_dependent
  bool touched_padding = false;      // any output pixel sampled from padding
  bool redetect_fallback = false;    // pose_dependent only: redetection missed
};

struct RotatedFrame {
  Image image;
  Mask padded;  // pixels whose bilinear sample reached outside the source
};

// Rotates the frame content by `angle` about `center`; output keeps the
// input dimensions. Output pixel q samples the input at
// rotate_point(q, center, -angle).
inline RotatedFrame rotate_frame(const Image& frame, Point2 center, Angle angle,
                                 PadPolicy pad_policy = PadPolicy::replicate) {
  if (frame.empty()) throw InvalidInputError("rotate_frame: empty image");
  if (!center.finite()) throw InvalidInputError("rotate_frame: center must be finite");

  RotatedFrame out;
  out.image = Image(frame.height, frame.width);
  out.padded = Mask(frame.height, frame.width);
  if (angle.degrees == 0.0) {
    out.image = frame;  // bit-identical
    return out;
  }
  const Angle inverse = angle.negated();
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      const Point2 src = rotate_point({static_cast<double>(x), static_cast<double>(y)},
                                      center, inverse);
      bool padded = false;
      const auto rgb = bilinear_sample(frame, src.x, src.y, pad_policy, &padded);
      out.image.at(y, x, 0) = rgb[0];
      out.image.at(y, x, 1) = rgb[1];
      out.image.at(y, x, 2) = rgb[2];
      out.padded.at(y, x) = padded;
    }
  }
  return out;
}

// Resamples the box region to target x target. Output pixel t maps to
// source coordinate x_min + (t + 0.5) * box_extent / target - 0.5, so a
// full-image box at native size is the identity. Samples falling outside
// the image replicate the border and set *touched_padding; so do samples
// landing on `source_padding` pixels (the rotation's fill-in), which is how
// the pose-dependent path detects texture loss.
inline Image crop_scale(const Image& image, const BoundingBox& box, int target,
                        bool* touched_padding = nullptr,
                        const Mask* source_padding = nullptr) {
  if (image.empty()) throw InvalidInputError("crop_scale: empty image");
  if (target < 8) throw ParameterError("crop target must be >= 8");
  if (!box.valid()) throw InvalidCropError("invalid crop box");
  if (box.x_max <= 0.0 || box.y_max <= 0.0 || box.x_min >= image.width ||
      box.y_min >= image.height) {
    throw InvalidCropError("crop box lies fully outside the image");
  }

  Image out(target, target);
  bool touched = false;
  const double sx_scale = box.width() / target;
  const double sy_scale = box.height() / target;
  for (int ty = 0; ty < target; ++ty) {
    const double sy = box.y_min + (ty + 0.5) * sy_scale - 0.5;
    for (int tx = 0; tx < target; ++tx) {
      const double sx = box.x_min + (tx + 0.5) * sx_scale - 0.5;
      bool padded = false;
      const auto rgb = bilinear_sample(image, sx, sy, PadPolicy::replicate, &padded);
      if (source_padding && !padded) {
        // check the 2x2 neighborhood against the rotation's padded map
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const double fx = sx - x0, fy = sy - y0;
        const double wx[2] = {1.0 - fx, fx};
        const double wy[2] = {1.0 - fy, fy};
        for (int dy = 0; dy < 2 && !padded; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            if (wy[dy] * wx[dx] <= kPadWeightEps) continue;
            if (source_padding->at(y0 + dy, x0 + dx)) {
              padded = true;
              break;
            }
          }
        }
      }
      touched |= padded;
      out.at(ty, tx, 0) = std::clamp(rgb[0], 0.0, 1.0);
      out.at(ty, tx, 1) = std::clamp(rgb[1], 0.0, 1.0);
      out.at(ty, tx, 2) = std::clamp(rgb[2], 0.0, 1.0);
    }
  }
  if (touched_padding) *touched_padding = touched;
  return out;
}

inline AlignedFace align_pose_independent(const Image& frame, const Detection& detection,
                                          int target, int source_frame_index = 0) {
  AlignedFace face;
  face.mode = AlignmentMode::pose_independent;
  face.source_frame_index = source_frame_index;
  face.applied_angle = Angle::from_degrees(0.0);
  face.crop_box = detection.box;
  face.pixels = crop_scale(frame, detection.box, target, &face.touched_padding);
  return face;
}

using RedetectFn = std::function<std::vector<Detection>(const Image&)>;

// Rotates the full frame so the eyes sit level (never crops first, which
// would lose texture at the corners), re-detects on the rotated frame, and
// crops the freshly detected box. If redetection finds nothing, the
// original box mapped through the rotation is used and the face is flagged.
inline AlignedFace align_pose_dependent(const Image& frame, const Detection& detection,
                                        const RedetectFn& redetect, int target,
                                        int source_frame_index = 0) {
  const Angle tilt = eye_rotation_angle(detection.landmarks);
  const Point2 center = eye_midpoint(detection.landmarks);
  const Angle applied = tilt.negated();

  const RotatedFrame rotated = rotate_frame(frame, center, applied, PadPolicy::replicate);

  AlignedFace face;
  face.mode = AlignmentMode::pose_dependent;
  face.source_frame_index = source_frame_index;
  face.applied_angle = applied;

  const std::vector<Detection> redetections = redetect(rotated.image);
  if (!redetections.empty()) {
    face.crop_box = primary_face(redetections).box;
  } else {
    face.crop_box = rotate_box_bounds(detection.box, center, applied);
    face.redetect_fallback = true;
  }
  face.pixels = crop_scale(rotated.image, face.crop_box, target, &face.touched_padding,
                           &rotated.padded);
  return face;
}

}  // namespace depscreen
