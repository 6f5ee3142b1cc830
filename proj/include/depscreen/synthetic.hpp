#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "depscreen/detect.hpp"
#include "depscreen/geometry.hpp"
#include "depscreen/image.hpp"

// Synthetic fiducial faces: color-keyed patterns the oracle detector can
// read back (see detect.hpp). Used by tests and by the desk-scale corpus
// fixtures. The identity band encodes a per-subject gray level inside the
// face region, so a regression model has a learnable texture cue.

namespace depscreen::synthetic {

struct FaceSpec {
  BoundingBox box;          // upright face extent (before tilt)
  double identity = 0.5;    // in [0,1]; drives the identity band gray level
  Angle tilt;               // rotation of the whole pattern about the box center
};

// Canonical five-point layout inside an upright face box.
inline LandmarkSet face_landmarks(const BoundingBox& box) {
  const double w = box.width(), h = box.height();
  return {{box.x_min + 0.30 * w, box.y_min + 0.30 * h},
          {box.x_min + 0.70 * w, box.y_min + 0.30 * h},
          {box.x_min + 0.50 * w, box.y_min + 0.55 * h},
          {box.x_min + 0.35 * w, box.y_min + 0.78 * h},
          {box.x_min + 0.65 * w, box.y_min + 0.78 * h}};
}

inline double identity_gray(double identity) { return 0.10 + 0.80 * identity; }

// Paints the (possibly tilted) face pattern. Pixels are classified in
// "face space" (the upright layout), so the painted pattern is an exact
// rotation with no resampling blur. Returns the landmarks in frame
// coordinates.
inline LandmarkSet paint_face(Image& frame, const FaceSpec& spec) {
  if (!spec.box.valid()) throw InvalidInputError("paint_face: invalid box");
  const Point2 center = spec.box.center();
  const LandmarkSet upright = face_landmarks(spec.box);
  const Point2 marks[5] = {upright.left_eye, upright.right_eye, upright.nose,
                           upright.mouth_left, upright.mouth_right};
  const std::array<double, 3> mark_colors[5] = {
      fiducial::kLeftEye, fiducial::kRightEye, fiducial::kNose,
      fiducial::kMouthLeft, fiducial::kMouthRight};

  const double w = spec.box.width(), h = spec.box.height();
  const BoundingBox band{spec.box.x_min + 0.20 * w, spec.box.y_min + 0.62 * h,
                         spec.box.x_max - 0.20 * w, spec.box.y_min + 0.72 * h};
  const double gray = identity_gray(spec.identity);

  // conservative scan window around the rotated pattern
  const BoundingBox scan = rotate_box_bounds(spec.box, center, spec.tilt).expand(0.1);
  const int y0 = std::max(0, static_cast<int>(std::floor(scan.y_min)));
  const int y1 = std::min(frame.height - 1, static_cast<int>(std::ceil(scan.y_max)));
  const int x0 = std::max(0, static_cast<int>(std::floor(scan.x_min)));
  const int x1 = std::min(frame.width - 1, static_cast<int>(std::ceil(scan.x_max)));

  const Angle untilt = spec.tilt.negated();
  const double r2 = fiducial::kMarkRadius * fiducial::kMarkRadius;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Point2 p = rotate_point({static_cast<double>(x), static_cast<double>(y)},
                                    center, untilt);
      if (!spec.box.contains(p)) continue;
      std::array<double, 3> color = fiducial::kFaceColor;
      if (band.contains(p)) color = {gray, gray, gray};
      for (int k = 0; k < 5; ++k) {
        const double dx = p.x - marks[k].x, dy = p.y - marks[k].y;
        if (dx * dx + dy * dy <= r2) {
          color = mark_colors[k];
          break;
        }
      }
      frame.set_pixel(y, x, color[0], color[1], color[2]);
    }
  }
  return rotate_landmarks(upright, center, spec.tilt);
}

// Smooth deterministic background texture, everywhere nonzero and outside
// every fiducial color key.
inline Image textured_background(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  const double p1 = phase(rng), p2 = phase(rng);
  Image frame(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double u = static_cast<double>(x) / width;
      const double v = static_cast<double>(y) / height;
      const double a = std::sin(2.0 * kPi * (3.0 * u + 2.0 * v) + p1);
      const double b = std::sin(2.0 * kPi * (2.0 * u - 3.0 * v) + p2);
      frame.set_pixel(y, x, 0.30 + 0.12 * a, 0.35 + 0.10 * b, 0.25 + 0.08 * a * b);
    }
  }
  return frame;
}

struct VideoSpec {
  std::string video_id;
  std::string subject_id;
  std::string task;       // northwind | freeform | single
  std::string partition;  // training | development | test
  int bdi_score = 0;
  int frames = 12;
};

struct CorpusSpec {
  int frame_height = 128;
  int frame_width = 128;
  double face_size = 64.0;  // upright box side length in pixels
  double max_tilt_degrees = 8.0;
  std::uint64_t seed = 7;
  std::vector<VideoSpec> videos;
};

// Writes a generic-layout corpus: root/<video_id>/frame_NNNNNN.ppm plus
// root/labels.csv. Face placement and tilt jitter are deterministic from
// the corpus seed; the identity band encodes bdi_score/63.
inline void write_synthetic_corpus(const std::filesystem::path& root, const CorpusSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::ofstream labels(root / "labels.csv");
  if (!labels) throw IoError("cannot write labels.csv under " + root.string());
  labels << "# video_id,subject_id,task,partition,bdi_score\n";

  for (size_t vi = 0; vi < spec.videos.size(); ++vi) {
    const VideoSpec& video = spec.videos[vi];
    const fs::path dir = root / video.video_id;
    fs::create_directories(dir);
    std::mt19937_64 rng(mix_seed(spec.seed, vi));
    std::uniform_real_distribution<double> shift(-3.0, 3.0);
    std::uniform_real_distribution<double> tilt(-spec.max_tilt_degrees, spec.max_tilt_degrees);

    for (int f = 0; f < video.frames; ++f) {
      Image frame = textured_background(spec.frame_height, spec.frame_width,
                                        mix_seed(spec.seed, vi * 1000 + f));
      const double cx = spec.frame_width / 2.0 + shift(rng);
      const double cy = spec.frame_height / 2.0 + shift(rng);
      FaceSpec face;
      face.box = {cx - spec.face_size / 2.0, cy - spec.face_size / 2.0,
                  cx + spec.face_size / 2.0, cy + spec.face_size / 2.0};
      face.identity = video.bdi_score / 63.0;
      face.tilt = Angle::from_degrees(tilt(rng));
      paint_face(frame, face);

      char name[32];
      std::snprintf(name, sizeof(name), "frame_%06d.ppm", f);
      write_ppm(frame, dir / name);
    }
    labels << video.video_id << "," << video.subject_id << "," << video.task << ","
           << video.partition << "," << video.bdi_score << "\n";
  }
}

}  // namespace depscreen::synthetic
