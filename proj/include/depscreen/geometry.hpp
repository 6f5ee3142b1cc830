#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "depscreen/common.hpp"

// Coordinate conventions used everywhere in this library:
//   - origin at the top-left pixel, x grows right, y grows down;
//   - pixel (row i, col j) has its center at continuous (x=j, y=i);
//   - a positive angle rotates the +x axis toward the +y axis
//     (clockwise on screen).
// Angles are stored in degrees, normalized to (-180, 180].

namespace depscreen {

constexpr double kPi = 3.14159265358979323846;

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  bool finite() const { return is_finite(x) && is_finite(y); }
};

inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
inline Point2 operator*(Point2 a, double s) { return {a.x * s, a.y * s}; }

struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  Point2 center() const { return {(x_min + x_max) / 2.0, (y_min + y_max) / 2.0}; }

  bool valid() const {
    return is_finite(x_min) && is_finite(y_min) && is_finite(x_max) &&
           is_finite(y_max) && x_min < x_max && y_min < y_max;
  }

  bool contains(Point2 p) const {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
  }

  // Scales the box extents by (1 + 2*margin) about its center, e.g.
  // expand(0.05) grows each side by 5% of the half-extent.
  BoundingBox expand(double margin) const {
    const double hw = width() / 2.0 * (1.0 + 2.0 * margin);
    const double hh = height() / 2.0 * (1.0 + 2.0 * margin);
    const Point2 c = center();
    return {c.x - hw, c.y - hh, c.x + hw, c.y + hh};
  }
};

inline double normalize_degrees(double deg) {
  double d = std::fmod(deg, 360.0);
  if (d <= -180.0) d += 360.0;
  if (d > 180.0) d -= 360.0;
  // fmod can yield -0.0; keep the canonical zero
  if (d == 0.0) d = 0.0;
  return d;
}

struct Angle {
  double degrees = 0.0;

  static Angle from_degrees(double deg) {
    if (!is_finite(deg)) throw InvalidInputError("angle must be finite");
    return Angle{normalize_degrees(deg)};
  }
  static Angle from_radians(double rad) {
    return from_degrees(rad * 180.0 / kPi);
  }

  double radians() const { return degrees * kPi / 180.0; }
  Angle negated() const { return from_degrees(-degrees); }
};

struct LandmarkSet {
  Point2 left_eye;
  Point2 right_eye;
  Point2 nose;
  Point2 mouth_left;
  Point2 mouth_right;

  bool finite() const {
    return left_eye.finite() && right_eye.finite() && nose.finite() &&
           mouth_left.finite() && mouth_right.finite();
  }
};

inline Point2 rotate_point(Point2 p, Point2 center, Angle angle) {
  const double c = std::cos(angle.radians());
  const double s = std::sin(angle.radians());
  const Point2 d = p - center;
  return {center.x + d.x * c - d.y * s, center.y + d.x * s + d.y * c};
}

inline Point2 eye_midpoint(const LandmarkSet& lm) {
  return (lm.left_eye + lm.right_eye) * 0.5;
}

// Angle of the left-eye -> right-eye segment. Rotating both eyes by the
// negated angle about their midpoint makes their y-coordinates equal.
inline Angle eye_rotation_angle(const LandmarkSet& lm) {
  if (!lm.finite()) throw InvalidInputError("landmarks must be finite");
  const Point2 d = lm.right_eye - lm.left_eye;
  if (d.x == 0.0 && d.y == 0.0) {
    throw DegenerateLandmarksError("eye landmarks coincide");
  }
  return Angle::from_radians(std::atan2(d.y, d.x));
}

inline LandmarkSet rotate_landmarks(const LandmarkSet& lm, Point2 center,
                                    Angle angle) {
  return {rotate_point(lm.left_eye, center, angle),
          rotate_point(lm.right_eye, center, angle),
          rotate_point(lm.nose, center, angle),
          rotate_point(lm.mouth_left, center, angle),
          rotate_point(lm.mouth_right, center, angle)};
}

// Axis-aligned bounding box of the four rotated corners of `box`.
inline BoundingBox rotate_box_bounds(const BoundingBox& box, Point2 center,
                                     Angle angle) {
  const Point2 corners[4] = {
      rotate_point({box.x_min, box.y_min}, center, angle),
      rotate_point({box.x_max, box.y_min}, center, angle),
      rotate_point({box.x_min, box.y_max}, center, angle),
      rotate_point({box.x_max, box.y_max}, center, angle)};
  BoundingBox out{corners[0].x, corners[0].y, corners[0].x, corners[0].y};
  for (const Point2& c : corners) {
    out.x_min = std::min(out.x_min, c.x);
    out.y_min = std::min(out.y_min, c.y);
    out.x_max = std::max(out.x_max, c.x);
    out.y_max = std::max(out.y_max, c.y);
  }
  return out;
}

}  // namespace depscreen
