#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "depscreen/common.hpp"
#include "depscreen/container.hpp"
#include "depscreen/geometry.hpp"
#include "depscreen/image.hpp"
#include "depscreen/nn.hpp"

namespace depscreen {

struct Detection {
  BoundingBox box;
  LandmarkSet landmarks;
  double confidence = 0.0;
};

// Invariant check: five landmarks inside (or on) the box grown by 10% of its
// extent, confidence in [0,1].
inline bool detection_valid(const Detection& d) {
  if (!d.box.valid()) return false;
  if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) return false;
  const BoundingBox grown = d.box.expand(0.05);
  const Point2 pts[5] = {d.landmarks.left_eye, d.landmarks.right_eye, d.landmarks.nose,
                         d.landmarks.mouth_left, d.landmarks.mouth_right};
  for (const Point2& p : pts) {
    if (!p.finite() || !grown.contains(p)) return false;
  }
  return true;
}

enum class DetectorBackend { pretrained, synthetic_oracle };

struct DetectorConfig {
  DetectorBackend backend = DetectorBackend::synthetic_oracle;
  double min_confidence = 0.9;
  std::filesystem::path model_path;  // pretrained backend only
};

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<Detection> detect(const Image& image) const = 0;
};

inline Detection primary_face(const std::vector<Detection>& detections) {
  if (detections.empty()) throw NoFaceError("no face detections to choose from");
  const Detection* best = &detections.front();
  for (const Detection& d : detections) {
    const double da = d.box.area();
    const double ba = best->box.area();
    if (da > ba ||
        (da == ba && (d.confidence > best->confidence ||
                      (d.confidence == best->confidence && d.box.x_min < best->box.x_min)))) {
      best = &d;
    }
  }
  return *best;
}

// ---------------------------------------------------------------------------
// Synthetic-oracle backend.
//
// Faces are encoded as machine-readable color keys: a filled "skin"
// rectangle marks the face extent and five saturated disks mark the
// landmarks. The oracle recovers boxes from the skin-pixel extent of each
// connected component and landmarks from per-class pixel centroids, which
// stays accurate (sub-pixel) under bilinear rotation and rescaling because
// the disk cores keep their exact colors.

namespace fiducial {

constexpr std::array<double, 3> kFaceColor = {0.85, 0.70, 0.55};
constexpr std::array<double, 3> kLeftEye = {1.0, 0.0, 0.0};
constexpr std::array<double, 3> kRightEye = {0.0, 1.0, 0.0};
constexpr std::array<double, 3> kNose = {0.0, 0.0, 1.0};
constexpr std::array<double, 3> kMouthLeft = {1.0, 1.0, 0.0};
constexpr std::array<double, 3> kMouthRight = {1.0, 0.0, 1.0};
constexpr double kMarkRadius = 3.0;

inline bool is_face_pixel(double r, double g, double b) {
  return std::abs(r - kFaceColor[0]) < 0.08 && std::abs(g - kFaceColor[1]) < 0.08 &&
         std::abs(b - kFaceColor[2]) < 0.08;
}

// landmark classes in LandmarkSet field order
inline bool is_mark_pixel(int cls, double r, double g, double b) {
  switch (cls) {
    case 0: return r > 0.90 && g < 0.25 && b < 0.25;  // left eye
    case 1: return r < 0.25 && g > 0.90 && b < 0.25;  // right eye
    case 2: return r < 0.25 && g < 0.25 && b > 0.90;  // nose
    case 3: return r > 0.90 && g > 0.90 && b < 0.25;  // mouth left
    case 4: return r > 0.90 && g < 0.25 && b > 0.90;  // mouth right
    default: return false;
  }
}

// Sub-pixel centroid of one landmark class inside a region of interest.
// Returns the number of core pixels found.
inline int mark_centroid(const Image& img, int cls, const BoundingBox& roi, Point2* out) {
  const int y0 = std::max(0, static_cast<int>(std::floor(roi.y_min)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(roi.y_max)));
  const int x0 = std::max(0, static_cast<int>(std::floor(roi.x_min)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(roi.x_max)));
  double sx = 0.0, sy = 0.0;
  int count = 0;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (is_mark_pixel(cls, img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2))) {
        sx += x;
        sy += y;
        ++count;
      }
    }
  }
  if (count > 0) *out = {sx / count, sy / count};
  return count;
}

}  // namespace fiducial

class SyntheticOracleDetector : public Detector {
 public:
  explicit SyntheticOracleDetector(double min_confidence = 0.9)
      : min_confidence_(min_confidence) {}

  std::vector<Detection> detect(const Image& image) const override {
    if (image.empty()) throw InvalidInputError("detect: empty image");
    const int H = image.height, W = image.width;
    std::vector<std::uint8_t> face(static_cast<size_t>(H) * W, 0);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        face[static_cast<size_t>(y) * W + x] =
            fiducial::is_face_pixel(image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2));
      }
    }

    std::vector<Detection> out;
    std::vector<std::uint8_t> seen(face.size(), 0);
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const size_t i = static_cast<size_t>(y) * W + x;
        if (!face[i] || seen[i]) continue;
        // flood fill one component
        int min_x = x, max_x = x, min_y = y, max_y = y, count = 0;
        queue.clear();
        queue.emplace_back(y, x);
        seen[i] = 1;
        while (!queue.empty()) {
          auto [cy, cx] = queue.front();
          queue.pop_front();
          ++count;
          min_x = std::min(min_x, cx);
          max_x = std::max(max_x, cx);
          min_y = std::min(min_y, cy);
          max_y = std::max(max_y, cy);
          constexpr int dys[4] = {-1, 1, 0, 0};
          constexpr int dxs[4] = {0, 0, -1, 1};
          for (int k = 0; k < 4; ++k) {
            const int ny = cy + dys[k], nx = cx + dxs[k];
            if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
            const size_t ni = static_cast<size_t>(ny) * W + nx;
            if (face[ni] && !seen[ni]) {
              seen[ni] = 1;
              queue.emplace_back(ny, nx);
            }
          }
        }
        if (count < 30) continue;  // blended fringe, not a face

        Detection d;
        d.box = {static_cast<double>(min_x), static_cast<double>(min_y),
                 static_cast<double>(max_x + 1), static_cast<double>(max_y + 1)};
        const BoundingBox roi = d.box.expand(0.1);
        Point2 pts[5];
        bool complete = true;
        for (int cls = 0; cls < 5; ++cls) {
          if (fiducial::mark_centroid(image, cls, roi, &pts[cls]) < 3) {
            complete = false;
            break;
          }
        }
        if (!complete) continue;
        d.landmarks = {pts[0], pts[1], pts[2], pts[3], pts[4]};
        d.confidence = 1.0;
        if (d.confidence >= min_confidence_ && detection_valid(d)) out.push_back(d);
      }
    }
    std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
      return a.box.x_min != b.box.x_min ? a.box.x_min < b.box.x_min
                                        : a.box.y_min < b.box.y_min;
    });
    return out;
  }

 private:
  double min_confidence_;
};

// ---------------------------------------------------------------------------
// Pretrained backend: a serialized fully-convolutional detector in the
// native container format. Each output cell carries
//   [objectness logit, dx, dy, log w, log h, 10 landmark offsets]
// in units of the network's total stride. Weights come from the model file;
// this library only runs inference.

class PretrainedDetector : public Detector {
 public:
  PretrainedDetector(const std::filesystem::path& model_path, double min_confidence)
      : min_confidence_(min_confidence) {
    if (!std::filesystem::exists(model_path)) {
      throw BackendError("detector model file not found: " + model_path.string());
    }
    Container c;
    try {
      c = read_container(model_path);
    } catch (const Error& e) {
      throw BackendError(std::string("cannot load detector model: ") + e.what());
    }
    if (c.header.value("kind", "") != "detector") {
      throw BackendError("not a detector model: " + model_path.string());
    }
    stride_ = c.header.value("stride", 0);
    if (stride_ <= 0) throw BackendError("detector model missing stride");

    std::mt19937_64 rng(0);  // placeholder init, overwritten from the file
    net_ = std::make_unique<nn::Sequential>();
    int idx = 0;
    for (const auto& spec : c.header.at("arch")) {
      const std::string type = spec.at("type").get<std::string>();
      const std::string name = "layer" + std::to_string(idx++);
      if (type == "conv") {
        net_->add(name, std::make_unique<nn::Conv2d>(
                            spec.at("in").get<int>(), spec.at("out").get<int>(),
                            spec.at("kernel").get<int>(), spec.at("stride").get<int>(),
                            spec.at("padding").get<int>(), spec.value("bias", true), rng));
      } else if (type == "relu") {
        net_->add(name, std::make_unique<nn::ReLU>());
      } else if (type == "maxpool") {
        net_->add(name, std::make_unique<nn::MaxPool2d>(spec.at("kernel").get<int>(),
                                                        spec.at("stride").get<int>(),
                                                        spec.value("padding", 0)));
      } else {
        throw BackendError("unsupported detector layer type: " + type);
      }
    }
    std::vector<Param*> params;
    net_->collect_params("", params);
    for (Param* p : params) {
      auto it = c.tensors.find(p->name);
      if (it == c.tensors.end()) {
        throw BackendError("detector model missing tensor: " + p->name);
      }
      if (it->second.shape != p->value.shape) {
        throw BackendError("detector model shape mismatch for " + p->name);
      }
      p->value = it->second;
    }
  }

  std::vector<Detection> detect(const Image& image) const override {
    if (image.empty()) throw InvalidInputError("detect: empty image");
    Tensor input({1, 3, image.height, image.width});
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
          input.data[(static_cast<std::int64_t>(c) * image.height + y) * image.width + x] =
              image.at(y, x, c);
        }
      }
    }
    const Tensor map = net_->forward(input, /*train=*/false);
    if (map.shape.size() != 4 || map.shape[1] != 15) {
      throw BackendError("detector head must emit 15 channels");
    }
    const int FH = static_cast<int>(map.shape[2]);
    const int FW = static_cast<int>(map.shape[3]);
    const std::int64_t plane = static_cast<std::int64_t>(FH) * FW;
    auto at = [&](int ch, int fy, int fx) {
      return map.data[ch * plane + static_cast<std::int64_t>(fy) * FW + fx];
    };

    std::vector<Detection> candidates;
    for (int fy = 0; fy < FH; ++fy) {
      for (int fx = 0; fx < FW; ++fx) {
        const double score = nn::sigmoid(at(0, fy, fx));
        if (score < min_confidence_) continue;
        const double cx = (fx + 0.5 + at(1, fy, fx)) * stride_;
        const double cy = (fy + 0.5 + at(2, fy, fx)) * stride_;
        const double w = std::exp(std::clamp(at(3, fy, fx), -8.0, 8.0)) * stride_;
        const double h = std::exp(std::clamp(at(4, fy, fx), -8.0, 8.0)) * stride_;
        Detection d;
        d.box = {std::max(0.0, cx - w / 2.0), std::max(0.0, cy - h / 2.0),
                 std::min<double>(image.width, cx + w / 2.0),
                 std::min<double>(image.height, cy + h / 2.0)};
        if (!d.box.valid()) continue;
        const BoundingBox clamp_box = d.box.expand(0.05);
        Point2* pts[5] = {&d.landmarks.left_eye, &d.landmarks.right_eye, &d.landmarks.nose,
                          &d.landmarks.mouth_left, &d.landmarks.mouth_right};
        for (int k = 0; k < 5; ++k) {
          pts[k]->x = std::clamp(cx + at(5 + 2 * k, fy, fx) * stride_, clamp_box.x_min,
                                 clamp_box.x_max);
          pts[k]->y = std::clamp(cy + at(6 + 2 * k, fy, fx) * stride_, clamp_box.y_min,
                                 clamp_box.y_max);
        }
        d.confidence = score;
        if (detection_valid(d)) candidates.push_back(d);
      }
    }

    // greedy NMS, IoU 0.5
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Detection& a, const Detection& b) {
                       return a.confidence > b.confidence;
                     });
    std::vector<Detection> kept;
    for (const Detection& d : candidates) {
      bool suppressed = false;
      for (const Detection& k : kept) {
        if (iou(d.box, k.box) > 0.5) {
          suppressed = true;
          break;
        }
      }
      if (!suppressed) kept.push_back(d);
    }
    std::sort(kept.begin(), kept.end(), [](const Detection& a, const Detection& b) {
      return a.box.x_min != b.box.x_min ? a.box.x_min < b.box.x_min
                                        : a.box.y_min < b.box.y_min;
    });
    return kept;
  }

 private:
  static double iou(const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
  }

  double min_confidence_;
  int stride_ = 0;
  std::unique_ptr<nn::Sequential> net_;
};

inline std::unique_ptr<Detector> make_detector(const DetectorConfig& config) {
  if (config.min_confidence < 0.0 || config.min_confidence > 1.0) {
    throw ParameterError("min_confidence must lie in [0,1]");
  }
  switch (config.backend) {
    case DetectorBackend::synthetic_oracle:
      return std::make_unique<SyntheticOracleDetector>(config.min_confidence);
    case DetectorBackend::pretrained:
      return std::make_unique<PretrainedDetector>(config.model_path, config.min_confidence);
  }
  throw BackendError("unknown detector backend");
}

inline std::vector<Detection> detect_faces(const Image& image, const DetectorConfig& config) {
  return make_detector(config)->detect(image);
}

}  // namespace depscreen
