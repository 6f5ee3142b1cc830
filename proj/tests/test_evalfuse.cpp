#include <gtest/gtest.h>

#include <random>

#include "depscreen/evalfuse.hpp"
#include "depscreen/trainer.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace depscreen;
namespace fs = std::filesystem;

namespace {

std::vector<double> random_scores(size_t n, std::uint64_t seed, double lo = 0.0,
                                  double hi = 63.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

StreamPrediction make_pred(const std::string& id, AlignmentMode stream, double score) {
  StreamPrediction p;
  p.video_id = id;
  p.stream = stream;
  p.frame_scores = {score};
  p.frame_indices = {0};
  p.video_score = clamp_score(score);
  return p;
}

}  // namespace

TEST(VideoScore, ConstantFramesGiveThatConstant) {
  EXPECT_DOUBLE_EQ(video_score({17.0, 17.0, 17.0}), 17.0);
}

TEST(VideoScore, AveragesFrames) {
  EXPECT_DOUBLE_EQ(video_score({4.0, 6.0}), 5.0);
}

TEST(VideoScore, MatchesBruteForceMeanOnLargeInput) {
  const auto scores = random_scores(1000, 42);
  const double expected = clamp_score(oracles::brute_mean(scores));
  EXPECT_NEAR(video_score(scores), expected, 1e-9);
}

TEST(VideoScore, ClampsToBdiRange) {
  EXPECT_DOUBLE_EQ(video_score({80.0, 90.0}), 63.0);
  EXPECT_DOUBLE_EQ(video_score({-5.0, -7.0}), 0.0);
}

TEST(VideoScore, EmptyInputThrows) {
  EXPECT_THROW(video_score({}), NoPredictionError);
}

TEST(Metrics, PerfectPredictionsGiveZero) {
  const std::vector<double> v{3.0, 9.0, 27.0};
  EXPECT_DOUBLE_EQ(mae(v, v), 0.0);
  EXPECT_DOUBLE_EQ(rmse(v, v), 0.0);
}

TEST(Metrics, HandArithmeticCase) {
  const std::vector<double> preds{0.0, 0.0};
  const std::vector<double> labels{3.0, 4.0};
  EXPECT_DOUBLE_EQ(mae(preds, labels), 3.5);
  EXPECT_NEAR(rmse(preds, labels), std::sqrt(12.5), 1e-12);
}

TEST(Metrics, MatchBruteForceOracles) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto preds = random_scores(1000, 100 + trial);
    const auto labels = random_scores(1000, 200 + trial);
    EXPECT_NEAR(mae(preds, labels), oracles::brute_mae(preds, labels), 1e-9);
    EXPECT_NEAR(rmse(preds, labels), oracles::brute_rmse(preds, labels), 1e-9);
    EXPECT_GE(rmse(preds, labels), mae(preds, labels));
  }
}

TEST(Metrics, InputErrorsOnMismatchOrEmpty) {
  EXPECT_THROW(mae({1.0}, {1.0, 2.0}), InvalidInputError);
  EXPECT_THROW(rmse({}, {}), InvalidInputError);
  EXPECT_THROW(error_distribution({1.0, 2.0}, {1.0}), InvalidInputError);
}

TEST(ErrorDistribution, SortsAbsoluteErrors) {
  const auto errors = error_distribution({5.0, 1.0}, {1.0, 5.0});
  ASSERT_EQ(errors.size(), 2u);
  EXPECT_DOUBLE_EQ(errors[0], 4.0);
  EXPECT_DOUBLE_EQ(errors[1], 4.0);
  const auto zeros = error_distribution({2.0, 3.0}, {2.0, 3.0});
  for (double e : zeros) EXPECT_DOUBLE_EQ(e, 0.0);
}

TEST(ErrorDistribution, MatchesSortOracleExactly) {
  const auto preds = random_scores(100, 9);
  const auto labels = random_scores(100, 10);
  const auto got = error_distribution(preds, labels);
  const auto want = oracles::brute_sorted_abs_diff(preds, labels);
  ASSERT_EQ(got.size(), want.size());
  for (size_t i = 0; i < got.size(); ++i) EXPECT_DOUBLE_EQ(got[i], want[i]);
  for (size_t i = 1; i < got.size(); ++i) EXPECT_GE(got[i], got[i - 1]);
}

TEST(FusionWeights, ValidatesSimplexConstraint) {
  EXPECT_NO_THROW(FusionWeights::make(0.7, 0.3));
  EXPECT_THROW(FusionWeights::make(0.7, 0.4), ParameterError);
  EXPECT_THROW(FusionWeights::make(-0.1, 1.1), ParameterError);
}

TEST(FuseStreams, EqualScoresAreAFixedPoint) {
  const auto a = make_pred("v1", AlignmentMode::pose_independent, 12.0);
  const auto b = make_pred("v1", AlignmentMode::pose_dependent, 12.0);
  for (double w : {0.0, 0.3, 0.5, 1.0}) {
    EXPECT_DOUBLE_EQ(fuse_streams(a, b, FusionWeights::make(w, 1.0 - w)), 12.0);
  }
}

TEST(FuseStreams, DegenerateWeightSelectsOneStream) {
  const auto a = make_pred("v1", AlignmentMode::pose_independent, 10.0);
  const auto b = make_pred("v1", AlignmentMode::pose_dependent, 30.0);
  EXPECT_DOUBLE_EQ(fuse_streams(a, b, FusionWeights::make(1.0, 0.0)), 10.0);
  EXPECT_DOUBLE_EQ(fuse_streams(a, b, FusionWeights::make(0.0, 1.0)), 30.0);
}

TEST(FuseStreams, WeightedArithmetic) {
  const auto a = make_pred("v1", AlignmentMode::pose_independent, 10.0);
  const auto b = make_pred("v1", AlignmentMode::pose_dependent, 0.0);
  EXPECT_DOUBLE_EQ(fuse_streams(a, b, FusionWeights::make(0.7, 0.3)), 7.0);
  // argument order must not matter: weights bind to streams, not slots
  EXPECT_DOUBLE_EQ(fuse_streams(b, a, FusionWeights::make(0.7, 0.3)), 7.0);
}

TEST(FuseStreams, MismatchedPairsThrow) {
  const auto a = make_pred("v1", AlignmentMode::pose_independent, 10.0);
  const auto b = make_pred("v2", AlignmentMode::pose_dependent, 20.0);
  EXPECT_THROW(fuse_streams(a, b, FusionWeights::make(0.5, 0.5)), PairingError);
  const auto c = make_pred("v1", AlignmentMode::pose_independent, 20.0);
  EXPECT_THROW(fuse_streams(a, c, FusionWeights::make(0.5, 0.5)), PairingError);
}

TEST(JointTaskScores, AveragesTaskPairs) {
  std::vector<VideoScoreRow> rows{
      {"n1", "s1", Task::northwind, 6.0, 9.0},
      {"f1", "s1", Task::freeform, 8.0, 9.0},
  };
  const auto subjects = joint_task_scores(rows);
  ASSERT_EQ(subjects.size(), 1u);
  EXPECT_DOUBLE_EQ(subjects[0].score, 7.0);
  EXPECT_DOUBLE_EQ(subjects[0].label, 9.0);
}

TEST(JointTaskScores, FiftySubjectsYieldFiftyOutputs) {
  std::vector<VideoScoreRow> rows;
  for (int i = 0; i < 50; ++i) {
    const std::string subject = "s" + std::to_string(100 + i);
    rows.push_back({"n" + std::to_string(i), subject, Task::northwind, i * 1.0, i * 1.0});
    rows.push_back({"f" + std::to_string(i), subject, Task::freeform, i + 2.0, i * 1.0});
  }
  const auto subjects = joint_task_scores(rows);
  ASSERT_EQ(subjects.size(), 50u);
  for (const auto& s : subjects) EXPECT_NEAR(s.score - s.label, 1.0, 1e-12);
}

TEST(JointTaskScores, ConstantPerSubjectIsIdentity) {
  std::vector<VideoScoreRow> rows{
      {"n1", "s1", Task::northwind, 13.5, 14.0},
      {"f1", "s1", Task::freeform, 13.5, 14.0},
  };
  EXPECT_DOUBLE_EQ(joint_task_scores(rows)[0].score, 13.5);
}

TEST(JointTaskScores, MissingTaskIsProtocolError) {
  std::vector<VideoScoreRow> rows{{"n1", "s1", Task::northwind, 6.0, 9.0}};
  EXPECT_THROW(joint_task_scores(rows), ProtocolError);
  rows.push_back({"n2", "s1", Task::northwind, 7.0, 9.0});
  EXPECT_THROW(joint_task_scores(rows), ProtocolError);
}

TEST(ComputeReport, MatchesStandaloneOpsOnHandFixture) {
  // four videos, hand-built predictions
  std::vector<VideoRecord> records(4);
  const char* ids[4] = {"v1", "v2", "v3", "v4"};
  const int labels[4] = {10, 20, 30, 40};
  std::map<std::string, detail::StreamPair> pairs;
  std::vector<double> ind_scores{12.0, 18.0, 33.0, 37.0};
  std::vector<double> dep_scores{8.0, 22.0, 27.0, 41.0};
  std::vector<const VideoRecord*> record_ptrs;
  for (int i = 0; i < 4; ++i) {
    records[i].video_id = ids[i];
    records[i].subject_id = "s" + std::to_string(i);
    records[i].task = Task::single;
    records[i].bdi_score = labels[i];
    pairs[ids[i]].independent = make_pred(ids[i], AlignmentMode::pose_independent,
                                          ind_scores[i]);
    pairs[ids[i]].dependent = make_pred(ids[i], AlignmentMode::pose_dependent, dep_scores[i]);
  }
  for (const auto& r : records) record_ptrs.push_back(&r);

  const EvalReport report = compute_report(record_ptrs, pairs,
                                           FusionWeights::make(0.5, 0.5), Protocol::single);
  const std::vector<double> label_d(labels, labels + 4);
  EXPECT_DOUBLE_EQ(report.independent_mae, mae(ind_scores, label_d));
  EXPECT_DOUBLE_EQ(report.independent_rmse, rmse(ind_scores, label_d));
  EXPECT_DOUBLE_EQ(report.dependent_mae, mae(dep_scores, label_d));
  std::vector<double> fused(4);
  for (int i = 0; i < 4; ++i) fused[i] = 0.5 * ind_scores[i] + 0.5 * dep_scores[i];
  EXPECT_DOUBLE_EQ(report.fused_mae, mae(fused, label_d));
  EXPECT_DOUBLE_EQ(report.fused_rmse, rmse(fused, label_d));
  ASSERT_EQ(report.sorted_abs_errors.size(), 4u);
  const auto want_errors = error_distribution(fused, label_d);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(report.sorted_abs_errors[i], want_errors[i]);
  EXPECT_EQ(report.video_count, 4);
  EXPECT_EQ(report.unit_count, 4);
  EXPECT_GE(report.fused_rmse, report.fused_mae);
}

TEST(ComputeReport, ConstantModelOnConstantLabelsScoresZero) {
  std::vector<VideoRecord> records(3);
  std::map<std::string, detail::StreamPair> pairs;
  for (int i = 0; i < 3; ++i) {
    records[i].video_id = "v" + std::to_string(i);
    records[i].subject_id = "s" + std::to_string(i);
    records[i].task = Task::single;
    records[i].bdi_score = 21;
    pairs[records[i].video_id].independent =
        make_pred(records[i].video_id, AlignmentMode::pose_independent, 21.0);
    pairs[records[i].video_id].dependent =
        make_pred(records[i].video_id, AlignmentMode::pose_dependent, 21.0);
  }
  std::vector<const VideoRecord*> ptrs;
  for (const auto& r : records) ptrs.push_back(&r);
  const EvalReport report =
      compute_report(ptrs, pairs, FusionWeights::make(0.5, 0.5), Protocol::single);
  EXPECT_DOUBLE_EQ(report.independent_mae, 0.0);
  EXPECT_DOUBLE_EQ(report.independent_rmse, 0.0);
  EXPECT_DOUBLE_EQ(report.dependent_mae, 0.0);
  EXPECT_DOUBLE_EQ(report.dependent_rmse, 0.0);
  EXPECT_DOUBLE_EQ(report.fused_mae, 0.0);
  EXPECT_DOUBLE_EQ(report.fused_rmse, 0.0);
  for (double e : report.sorted_abs_errors) EXPECT_DOUBLE_EQ(e, 0.0);
}

TEST(FrameScores, PersistAndReloadExactly) {
  fixtures::TempDir tmp("frame_scores");
  std::vector<StreamPrediction> preds;
  StreamPrediction p;
  p.video_id = "v1";
  p.stream = AlignmentMode::pose_independent;
  p.frame_indices = {0, 9, 18};
  p.frame_scores = {1.0 / 3.0, 17.123456789012345, -2.5};
  p.video_score = video_score(p.frame_scores);
  preds.push_back(p);
  const auto path = tmp.path() / "scores.csv";
  save_frame_scores(preds, path);
  const auto loaded = load_frame_scores(path, AlignmentMode::pose_independent);
  ASSERT_EQ(loaded.size(), 1u);
  ASSERT_EQ(loaded[0].frame_scores.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(loaded[0].frame_scores[i], p.frame_scores[i]);  // bit-exact round trip
    EXPECT_EQ(loaded[0].frame_indices[i], p.frame_indices[i]);
  }
  EXPECT_EQ(loaded[0].video_score, p.video_score);
}

TEST(Report, SaveLoadRoundTrip) {
  fixtures::TempDir tmp("report_io");
  EvalReport report;
  report.protocol = Protocol::joint;
  report.video_count = 100;
  report.unit_count = 50;
  report.independent_mae = 5.94;
  report.independent_rmse = 7.88;
  report.dependent_mae = 5.59;
  report.dependent_rmse = 7.34;
  report.fused_mae = 5.50;
  report.fused_rmse = 7.29;
  report.sorted_abs_errors = {0.25, 1.0 / 3.0, 9.75};
  const auto path = tmp.path() / "report.txt";
  save_report(report, path);
  const EvalReport loaded = load_report(path);
  EXPECT_EQ(loaded.protocol, Protocol::joint);
  EXPECT_EQ(loaded.video_count, 100);
  EXPECT_EQ(loaded.unit_count, 50);
  EXPECT_EQ(loaded.independent_mae, report.independent_mae);
  EXPECT_EQ(loaded.fused_rmse, report.fused_rmse);
  ASSERT_EQ(loaded.sorted_abs_errors.size(), 3u);
  EXPECT_EQ(loaded.sorted_abs_errors[1], 1.0 / 3.0);
}

TEST(RecomputeReport, OrderInvariantAcrossManifestShuffles) {
  fixtures::TempDir tmp("recompute");
  // persisted frame scores for 4 videos in both streams
  std::vector<StreamPrediction> ind, dep;
  Manifest manifest;
  manifest.corpus_name = "x";
  manifest.stride = 1;
  for (int i = 0; i < 4; ++i) {
    const std::string id = "v" + std::to_string(i);
    StreamPrediction a, b;
    a.video_id = b.video_id = id;
    a.stream = AlignmentMode::pose_independent;
    b.stream = AlignmentMode::pose_dependent;
    a.frame_indices = b.frame_indices = {0, 1};
    a.frame_scores = {10.0 + i, 12.0 + i};
    b.frame_scores = {9.0 + i, 15.0 + i};
    a.video_score = video_score(a.frame_scores);
    b.video_score = video_score(b.frame_scores);
    ind.push_back(a);
    dep.push_back(b);
    VideoRecord rec;
    rec.video_id = id;
    rec.subject_id = "s" + std::to_string(i);
    rec.task = Task::single;
    rec.partition = Partition::test;
    rec.bdi_score = 11 + i;
    manifest.records.push_back(rec);
  }
  save_frame_scores(ind, tmp.path() / "ind.csv");
  save_frame_scores(dep, tmp.path() / "dep.csv");

  const EvalReport a =
      recompute_report(manifest, tmp.path() / "ind.csv", tmp.path() / "dep.csv",
                       FusionWeights::make(0.5, 0.5), Protocol::single, Partition::test);
  std::reverse(manifest.records.begin(), manifest.records.end());
  const EvalReport b =
      recompute_report(manifest, tmp.path() / "ind.csv", tmp.path() / "dep.csv",
                       FusionWeights::make(0.5, 0.5), Protocol::single, Partition::test);
  EXPECT_EQ(a.fused_mae, b.fused_mae);
  EXPECT_EQ(a.fused_rmse, b.fused_rmse);
  EXPECT_EQ(a.sorted_abs_errors, b.sorted_abs_errors);
}

TEST(Evaluate, JointProtocolEndToEndOnTaskPairedCorpus) {
  fixtures::TempDir tmp("eval_joint");
  // avec2014-shaped synthetic corpus: 6 subjects x (northwind + freeform)
  synthetic::CorpusSpec spec;
  spec.frame_height = 96;
  spec.frame_width = 96;
  spec.face_size = 56;
  spec.seed = 31;
  const char* partitions[3] = {"training", "development", "test"};
  for (int s = 0; s < 6; ++s) {
    const std::string subject = "subj" + std::to_string(s);
    const int score = 8 + s * 9;
    spec.videos.push_back({"n" + std::to_string(s), subject, "northwind",
                           partitions[s / 2], score, 3});
    spec.videos.push_back({"f" + std::to_string(s), subject, "freeform",
                           partitions[s / 2], score, 3});
  }
  const fs::path corpus = tmp.path() / "corpus";
  synthetic::write_synthetic_corpus(corpus, spec);
  const Manifest manifest =
      build_manifest(corpus, CorpusLayout::avec2014, corpus / "labels.csv", 1);
  save_manifest(manifest, tmp.path() / "manifest.tsv");
  for (AlignmentMode mode :
       {AlignmentMode::pose_independent, AlignmentMode::pose_dependent}) {
    extract_and_align(manifest, DetectorConfig{}, mode, 32, tmp.path() / "crops");
  }

  auto train_one = [&](AlignmentMode mode, const std::string& tag) {
    TrainConfig c;
    c.stream = mode;
    c.batch_size = 8;
    c.max_epochs = 1;
    c.seed = 4;
    c.model.backbone = Backbone::tiny_test;
    c.model.input_size = 32;
    c.manifest_path = tmp.path() / "manifest.tsv";
    c.crops_root = tmp.path() / "crops";
    c.checkpoint_dir = tmp.path() / ("ckpt_" + tag);
    return train_stream(c);
  };
  const TrainResult ind = train_one(AlignmentMode::pose_independent, "i");
  const TrainResult dep = train_one(AlignmentMode::pose_dependent, "d");

  EvaluateInputs inputs;
  inputs.manifest = load_manifest(tmp.path() / "manifest.tsv");
  inputs.crops_root = tmp.path() / "crops";
  inputs.checkpoint_independent = ind.last_checkpoint;
  inputs.checkpoint_dependent = dep.last_checkpoint;
  inputs.weights = FusionWeights::make(0.5, 0.5);
  inputs.protocol = Protocol::joint;
  inputs.partition = Partition::test;
  const fs::path out = tmp.path() / "eval";
  const EvalReport report = evaluate(inputs, out);

  EXPECT_EQ(report.video_count, 4);  // 2 test subjects x 2 tasks
  EXPECT_EQ(report.unit_count, 2);   // per-subject after task averaging
  EXPECT_EQ(report.sorted_abs_errors.size(), 2u);
  EXPECT_GE(report.fused_rmse, report.fused_mae);
  EXPECT_TRUE(fs::exists(out / "report.txt"));
  EXPECT_TRUE(fs::exists(out / "frame_scores_pose_independent.csv"));
  EXPECT_TRUE(fs::exists(out / "video_scores_fused.csv"));
  EXPECT_TRUE(fs::exists(out / "error_distribution.svg"));

  // the separated protocol over the same predictions scores videos directly
  inputs.protocol = Protocol::separated;
  const EvalReport separated = evaluate(inputs, tmp.path() / "eval_sep");
  EXPECT_EQ(separated.unit_count, 4);

  // offline recomputation from the persisted joint run matches bit for bit
  const EvalReport offline = recompute_report(
      inputs.manifest, out / "frame_scores_pose_independent.csv",
      out / "frame_scores_pose_dependent.csv", inputs.weights, Protocol::joint,
      Partition::test);
  const EvalReport live = load_report(out / "report.txt");
  EXPECT_EQ(offline.fused_mae, live.fused_mae);
  EXPECT_EQ(offline.fused_rmse, live.fused_rmse);
  EXPECT_EQ(offline.independent_mae, live.independent_mae);
}

TEST(Evaluate, MissingCheckpointIsConfigError) {
  fixtures::TempDir tmp("eval_missing");
  EvaluateInputs inputs;
  inputs.manifest.records.push_back({});
  inputs.checkpoint_independent = tmp.path() / "none_a.ckpt";
  inputs.checkpoint_dependent = tmp.path() / "none_b.ckpt";
  inputs.weights = FusionWeights::make(0.5, 0.5);
  EXPECT_THROW(evaluate(inputs, tmp.path() / "out"), ConfigError);
}
