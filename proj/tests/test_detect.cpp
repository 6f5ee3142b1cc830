#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "depscreen/detect.hpp"
#include "depscreen/synthetic.hpp"
#include "support/fixtures.hpp"

using namespace depscreen;

TEST(SyntheticOracle, BlankImageHasNoDetections) {
  const Image blank(64, 64, 0.5);
  SyntheticOracleDetector detector;
  EXPECT_TRUE(detector.detect(blank).empty());
}

TEST(SyntheticOracle, RecoversPaintedBoxAndLandmarks) {
  Image frame = synthetic::textured_background(128, 128, 4);
  synthetic::FaceSpec spec;
  spec.box = {30, 24, 94, 88};
  spec.identity = 0.7;
  const LandmarkSet truth = synthetic::paint_face(frame, spec);

  SyntheticOracleDetector detector;
  const auto detections = detector.detect(frame);
  ASSERT_EQ(detections.size(), 1u);
  const Detection& d = detections.front();
  EXPECT_NEAR(d.box.x_min, 30, 1.0);
  EXPECT_NEAR(d.box.y_min, 24, 1.0);
  EXPECT_NEAR(d.box.x_max, 94, 1.0);
  EXPECT_NEAR(d.box.y_max, 88, 1.0);
  EXPECT_NEAR(d.landmarks.left_eye.x, truth.left_eye.x, 1.0);
  EXPECT_NEAR(d.landmarks.left_eye.y, truth.left_eye.y, 1.0);
  EXPECT_NEAR(d.landmarks.mouth_right.x, truth.mouth_right.x, 1.0);
  EXPECT_NEAR(d.landmarks.mouth_right.y, truth.mouth_right.y, 1.0);
  EXPECT_DOUBLE_EQ(d.confidence, 1.0);
  EXPECT_TRUE(detection_valid(d));
}

TEST(SyntheticOracle, RoundTripsRandomInteriorPlacements) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> origin(8.0, 50.0);
  std::uniform_real_distribution<double> extent(56.0, 70.0);
  SyntheticOracleDetector detector;
  for (int i = 0; i < 50; ++i) {
    Image frame = synthetic::textured_background(160, 160, 1000 + i);
    synthetic::FaceSpec spec;
    const double x0 = origin(rng), y0 = origin(rng);
    spec.box = {x0, y0, x0 + extent(rng), y0 + extent(rng)};
    spec.identity = 0.3;
    const LandmarkSet truth = synthetic::paint_face(frame, spec);
    const auto detections = detector.detect(frame);
    ASSERT_EQ(detections.size(), 1u) << "placement " << i;
    const Detection& d = detections.front();
    EXPECT_NEAR(d.box.x_min, spec.box.x_min, 1.0);
    EXPECT_NEAR(d.box.y_max, spec.box.y_max, 1.0);
    const Point2 got[5] = {d.landmarks.left_eye, d.landmarks.right_eye, d.landmarks.nose,
                           d.landmarks.mouth_left, d.landmarks.mouth_right};
    const Point2 want[5] = {truth.left_eye, truth.right_eye, truth.nose, truth.mouth_left,
                            truth.mouth_right};
    for (int k = 0; k < 5; ++k) {
      EXPECT_NEAR(got[k].x, want[k].x, 1.0);
      EXPECT_NEAR(got[k].y, want[k].y, 1.0);
    }
  }
}

TEST(SyntheticOracle, FindsTwoSeparateFaces) {
  Image frame = synthetic::textured_background(220, 220, 5);
  synthetic::FaceSpec a, b;
  a.box = {10, 10, 70, 70};
  b.box = {120, 130, 190, 200};
  synthetic::paint_face(frame, a);
  synthetic::paint_face(frame, b);
  SyntheticOracleDetector detector;
  const auto detections = detector.detect(frame);
  ASSERT_EQ(detections.size(), 2u);
  EXPECT_LT(detections[0].box.x_min, detections[1].box.x_min);
}

TEST(SyntheticOracle, DeterministicAcrossCalls) {
  Image frame = synthetic::textured_background(128, 128, 6);
  synthetic::FaceSpec spec;
  spec.box = {40, 40, 100, 100};
  synthetic::paint_face(frame, spec);
  SyntheticOracleDetector detector;
  const auto a = detector.detect(frame);
  const auto b = detector.detect(frame);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].box.x_min, b[i].box.x_min);
    EXPECT_EQ(a[i].landmarks.nose.x, b[i].landmarks.nose.x);
    EXPECT_EQ(a[i].confidence, b[i].confidence);
  }
}

TEST(SyntheticOracle, EmptyImageRejected) {
  SyntheticOracleDetector detector;
  Image empty;
  EXPECT_THROW(detector.detect(empty), InvalidInputError);
}

namespace {

Detection make_detection(double x0, double y0, double x1, double y1, double confidence) {
  Detection d;
  d.box = {x0, y0, x1, y1};
  const double w = x1 - x0, h = y1 - y0;
  d.landmarks = {{x0 + 0.3 * w, y0 + 0.3 * h},
                 {x0 + 0.7 * w, y0 + 0.3 * h},
                 {x0 + 0.5 * w, y0 + 0.55 * h},
                 {x0 + 0.35 * w, y0 + 0.78 * h},
                 {x0 + 0.65 * w, y0 + 0.78 * h}};
  d.confidence = confidence;
  return d;
}

}  // namespace

TEST(PrimaryFace, SingleDetectionReturned) {
  const Detection d = make_detection(0, 0, 10, 10, 0.95);
  const Detection out = primary_face({d});
  EXPECT_DOUBLE_EQ(out.box.x_max, 10.0);
}

TEST(PrimaryFace, LargestAreaWins) {
  const Detection small = make_detection(0, 0, 10, 10, 0.99);   // area 100
  const Detection large = make_detection(20, 20, 40, 40, 0.90); // area 400
  EXPECT_DOUBLE_EQ(primary_face({small, large}).box.x_min, 20.0);
  EXPECT_DOUBLE_EQ(primary_face({large, small}).box.x_min, 20.0);
}

TEST(PrimaryFace, ConfidenceBreaksAreaTies) {
  const Detection a = make_detection(0, 0, 10, 10, 0.8);
  const Detection b = make_detection(30, 0, 40, 10, 0.9);
  EXPECT_DOUBLE_EQ(primary_face({a, b}).box.x_min, 30.0);
  EXPECT_DOUBLE_EQ(primary_face({b, a}).box.x_min, 30.0);
}

TEST(PrimaryFace, LowerXminBreaksFullTies) {
  const Detection a = make_detection(5, 0, 15, 10, 0.9);
  const Detection b = make_detection(30, 0, 40, 10, 0.9);
  EXPECT_DOUBLE_EQ(primary_face({a, b}).box.x_min, 5.0);
  EXPECT_DOUBLE_EQ(primary_face({b, a}).box.x_min, 5.0);
}

TEST(PrimaryFace, OrderInvariant) {
  std::vector<Detection> detections;
  for (int i = 0; i < 6; ++i) {
    detections.push_back(make_detection(i * 12.0, 0, i * 12.0 + 8 + i, 8.0 + i, 0.9));
  }
  const Detection want = primary_face(detections);
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(detections.begin(), detections.end(), rng);
    const Detection got = primary_face(detections);
    EXPECT_DOUBLE_EQ(got.box.x_min, want.box.x_min);
    EXPECT_DOUBLE_EQ(got.box.area(), want.box.area());
  }
}

TEST(PrimaryFace, EmptyListThrows) {
  EXPECT_THROW(primary_face({}), NoFaceError);
}

TEST(DetectionInvariants, LandmarkOutsideGrownBoxIsInvalid) {
  Detection d = make_detection(10, 10, 50, 50, 0.9);
  EXPECT_TRUE(detection_valid(d));
  d.landmarks.nose = {200, 200};
  EXPECT_FALSE(detection_valid(d));
  d = make_detection(10, 10, 50, 50, 1.5);
  EXPECT_FALSE(detection_valid(d));
}

TEST(MakeDetector, RejectsBadMinConfidence) {
  DetectorConfig config;
  config.min_confidence = 1.5;
  EXPECT_THROW(make_detector(config), ParameterError);
}

// --- pretrained backend ------------------------------------------------------

namespace {

std::filesystem::path write_tiny_detector_model(const std::filesystem::path& dir) {
  using namespace nn;
  std::mt19937_64 rng(2024);
  Sequential net;
  net.add("layer0", std::make_unique<Conv2d>(3, 8, 3, 2, 1, true, rng));
  net.add("layer1", std::make_unique<ReLU>());
  net.add("layer2", std::make_unique<Conv2d>(8, 15, 1, 1, 0, true, rng));
  std::vector<Param*> params;
  net.collect_params("", params);

  nlohmann::json header{
      {"kind", "detector"},
      {"stride", 2},
      {"arch",
       {{{"type", "conv"}, {"in", 3}, {"out", 8}, {"kernel", 3}, {"stride", 2},
         {"padding", 1}, {"bias", true}},
        {{"type", "relu"}},
        {{"type", "conv"}, {"in", 8}, {"out", 15}, {"kernel", 1}, {"stride", 1},
         {"padding", 0}, {"bias", true}}}}};
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (Param* p : params) tensors.emplace_back(p->name, &p->value);
  const auto path = dir / "tiny_detector.dsc";
  write_container(path, header, tensors);
  return path;
}

}  // namespace

TEST(PretrainedDetector, MissingModelFileIsBackendError) {
  DetectorConfig config;
  config.backend = DetectorBackend::pretrained;
  config.model_path = "/nonexistent/detector.dsc";
  EXPECT_THROW(make_detector(config), BackendError);
}

TEST(PretrainedDetector, WrongContainerKindIsBackendError) {
  fixtures::TempDir tmp("detector_kind");
  const auto path = tmp.path() / "weights.dsc";
  Tensor t({2, 2});
  write_container(path, {{"kind", "weights"}}, {{"x", &t}});
  DetectorConfig config;
  config.backend = DetectorBackend::pretrained;
  config.model_path = path;
  EXPECT_THROW(make_detector(config), BackendError);
}

TEST(PretrainedDetector, LoadedModelIsDeterministicAndValid) {
  fixtures::TempDir tmp("detector_run");
  const auto path = write_tiny_detector_model(tmp.path());
  DetectorConfig config;
  config.backend = DetectorBackend::pretrained;
  config.model_path = path;
  config.min_confidence = 0.3;  // random weights hover near sigmoid(0)
  const auto detector = make_detector(config);
  const auto detector2 = make_detector(config);

  const Image frame = synthetic::textured_background(64, 64, 8);
  const auto a = detector->detect(frame);
  const auto b = detector2->detect(frame);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].box.x_min, b[i].box.x_min);
    EXPECT_EQ(a[i].confidence, b[i].confidence);
    EXPECT_TRUE(detection_valid(a[i]));
    EXPECT_GE(a[i].confidence, 0.3);
  }
}

TEST(DetectFaces, DispatchesOnBackend) {
  Image frame = synthetic::textured_background(96, 96, 9);
  synthetic::FaceSpec spec;
  spec.box = {18, 18, 78, 78};
  synthetic::paint_face(frame, spec);
  DetectorConfig config;  // synthetic_oracle by default
  EXPECT_EQ(detect_faces(frame, config).size(), 1u);
}
