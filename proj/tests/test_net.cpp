#include <gtest/gtest.h>

#include <random>

#include "depscreen/net.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace depscreen;

namespace {

ModelConfig tiny_config(int input_size = 32, std::uint64_t seed = 0) {
  ModelConfig config;
  config.backbone = Backbone::tiny_test;
  config.pretrained = PretrainedSource::random;
  config.input_size = input_size;
  config.init_seed = seed;
  return config;
}

Tensor unit_batch(int b, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor batch({b, 3, size, size});
  for (double& v : batch.data) v = unit(rng);
  return batch;
}

// closed-form head parameter count: F*w1 + w1 + w1*w2 + w2 + w2*1 + 1
std::int64_t head_count_formula(std::int64_t f, std::int64_t w1, std::int64_t w2) {
  return f * w1 + w1 + w1 * w2 + w2 + w2 + 1;
}

}  // namespace

TEST(BuildModel, TinyHeadParameterCountMatchesFormula) {
  Model model(tiny_config());
  EXPECT_EQ(model.feature_dim(), 64);
  EXPECT_EQ(model.head_parameter_count(), head_count_formula(64, 512, 128));
  EXPECT_EQ(model.head_parameter_count(), 99073);
}

TEST(BuildModel, ResNet50HeadAndBackboneCounts) {
  ModelConfig config;
  config.backbone = Backbone::resnet50;
  config.input_size = 64;
  Model model(config);
  EXPECT_EQ(model.feature_dim(), 2048);
  EXPECT_EQ(model.head_parameter_count(), head_count_formula(2048, 512, 128));
  EXPECT_EQ(model.head_parameter_count(), 1114881);
  // canonical ResNet-50 minus its classifier
  EXPECT_EQ(model.parameter_count() - model.head_parameter_count(), 23508032);
}

TEST(BuildModel, SeededInitIsReproducible) {
  Model a(tiny_config(32, 77));
  Model b(tiny_config(32, 77));
  Model c(tiny_config(32, 78));
  ASSERT_EQ(a.params().size(), b.params().size());
  for (size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i]->value.data, b.params()[i]->value.data);
  }
  bool any_differs = false;
  for (size_t i = 0; i < a.params().size(); ++i) {
    if (a.params()[i]->value.data != c.params()[i]->value.data) any_differs = true;
  }
  EXPECT_TRUE(any_differs);
}

TEST(BuildModel, NoParameterIsFrozen) {
  Model model(tiny_config());
  for (Param* p : model.params()) EXPECT_TRUE(p->trainable) << p->name;
  ModelConfig config;
  config.backbone = Backbone::resnet50;
  config.input_size = 64;
  Model resnet(config);
  for (Param* p : resnet.params()) EXPECT_TRUE(p->trainable) << p->name;
}

TEST(Forward, SingleSampleGivesSingleScore) {
  Model model(tiny_config());
  const Tensor scores = model.forward(unit_batch(1, 32, 1), false);
  ASSERT_EQ(scores.shape, (std::vector<std::int64_t>{1}));
  EXPECT_TRUE(std::isfinite(scores.data[0]));
}

TEST(Forward, DuplicatedRowsGiveIdenticalScoresInEval) {
  Model model(tiny_config());
  Tensor batch = unit_batch(1, 32, 2);
  Tensor doubled({2, 3, 32, 32});
  std::copy(batch.data.begin(), batch.data.end(), doubled.data.begin());
  std::copy(batch.data.begin(), batch.data.end(),
            doubled.data.begin() + batch.data.size());
  const Tensor scores = model.forward(doubled, false);
  EXPECT_EQ(scores.data[0], scores.data[1]);
}

TEST(Forward, EvalIsBatchOrderInvariant) {
  Model model(tiny_config());
  const Tensor a = unit_batch(1, 32, 3);
  const Tensor b = unit_batch(1, 32, 4);
  Tensor ab({2, 3, 32, 32}), ba({2, 3, 32, 32});
  std::copy(a.data.begin(), a.data.end(), ab.data.begin());
  std::copy(b.data.begin(), b.data.end(), ab.data.begin() + a.data.size());
  std::copy(b.data.begin(), b.data.end(), ba.data.begin());
  std::copy(a.data.begin(), a.data.end(), ba.data.begin() + a.data.size());
  const Tensor s_ab = model.forward(ab, false);
  const Tensor s_ba = model.forward(ba, false);
  EXPECT_EQ(s_ab.data[0], s_ba.data[1]);
  EXPECT_EQ(s_ab.data[1], s_ba.data[0]);
}

TEST(Forward, RejectsBadShapesAndRanges) {
  Model model(tiny_config());
  EXPECT_THROW(model.forward(Tensor({1, 3, 16, 16}), false), InvalidInputError);
  EXPECT_THROW(model.forward(Tensor({1, 1, 32, 32}), false), InvalidInputError);
  Tensor bad({1, 3, 32, 32});
  bad.fill(0.5);
  bad.data[7] = 1.5;
  EXPECT_THROW(model.forward(bad, false), InvalidInputError);
}

TEST(Forward, GradientMatchesFiniteDifferencesOnTinyBackbone) {
  Model model(tiny_config(16, 5));
  const Tensor batch = unit_batch(2, 16, 6);
  const std::vector<double> labels{7.3, 21.9};
  std::mt19937_64 rng(7);
  const auto result = oracles::gradcheck_model(model, batch, labels, 6, rng);
  EXPECT_GE(result.passed, result.checked * 99 / 100)
      << "worst relative error " << result.worst_rel;
}

TEST(ClampScore, EnforcesBdiRange) {
  EXPECT_DOUBLE_EQ(clamp_score(-3.0), 0.0);
  EXPECT_DOUBLE_EQ(clamp_score(70.0), 63.0);
  EXPECT_DOUBLE_EQ(clamp_score(17.2), 17.2);
  EXPECT_THROW(clamp_score(std::nan("")), NumericError);
  EXPECT_THROW(clamp_score(std::numeric_limits<double>::infinity()), NumericError);
}

TEST(Checkpoint, RoundTripsBitExactly) {
  fixtures::TempDir tmp("ckpt_roundtrip");
  Model model(tiny_config(32, 9));
  model.step_counter() = 42;
  // perturb running stats so buffers are nontrivial
  model.forward(unit_batch(4, 32, 10), true);
  const nlohmann::json state{{"epoch", 3}, {"best_dev_mae", 4.5}};
  const auto path = tmp.path() / "model.ckpt";
  save_checkpoint(path, model, state);

  const Checkpoint ckpt = load_checkpoint(path);
  EXPECT_EQ(ckpt.state.at("epoch").get<int>(), 3);
  Model restored = restore_model(ckpt);
  EXPECT_EQ(restored.step_counter(), 42);
  ASSERT_EQ(restored.params().size(), model.params().size());
  for (size_t i = 0; i < model.params().size(); ++i) {
    EXPECT_EQ(restored.params()[i]->value.data, model.params()[i]->value.data)
        << model.params()[i]->name;
  }
  for (size_t i = 0; i < model.buffers().size(); ++i) {
    EXPECT_EQ(restored.buffers()[i].second->data, model.buffers()[i].second->data);
  }
  // restored model computes identical scores
  const Tensor batch = unit_batch(2, 32, 11);
  EXPECT_EQ(model.forward(batch, false).data, restored.forward(batch, false).data);
}

TEST(Checkpoint, CorruptFileIsCheckpointError) {
  fixtures::TempDir tmp("ckpt_corrupt");
  const auto path = tmp.path() / "junk.ckpt";
  std::ofstream(path) << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  EXPECT_THROW(load_checkpoint(tmp.path() / "missing.ckpt"), CheckpointError);
}

TEST(Checkpoint, MissingTensorIsCheckpointError) {
  fixtures::TempDir tmp("ckpt_partial");
  Model model(tiny_config());
  const auto path = tmp.path() / "model.ckpt";
  save_checkpoint(path, model, {});
  Checkpoint ckpt = load_checkpoint(path);
  ckpt.tensors.erase("head.out.bias");
  EXPECT_THROW(restore_model(ckpt), CheckpointError);
}

TEST(Pretrained, BackboneWeightsLoadIntoFreshModel) {
  fixtures::TempDir tmp("weights");
  Model source(tiny_config(32, 100));
  source.forward(unit_batch(4, 32, 12), true);  // move the BN running stats
  const auto path = tmp.path() / "backbone.weights";
  save_backbone_weights(source, path, "unit-test");

  ModelConfig config = tiny_config(32, 200);
  config.pretrained = PretrainedSource::generic_imagenet;
  config.pretrained_path = path;
  Model loaded(config);
  for (size_t i = 0; i < source.params().size(); ++i) {
    const Param* sp = source.params()[i];
    const Param* lp = loaded.params()[i];
    if (sp->name.rfind("backbone.", 0) == 0) {
      EXPECT_EQ(lp->value.data, sp->value.data) << sp->name;
    }
  }
  for (size_t i = 0; i < source.buffers().size(); ++i) {
    EXPECT_EQ(loaded.buffers()[i].second->data, source.buffers()[i].second->data);
  }
  // heads come from their own seeds and must differ
  bool head_differs = false;
  for (size_t i = 0; i < source.params().size(); ++i) {
    if (source.params()[i]->name.rfind("head.", 0) == 0 &&
        source.params()[i]->value.data != loaded.params()[i]->value.data) {
      head_differs = true;
    }
  }
  EXPECT_TRUE(head_differs);
}

TEST(Pretrained, MissingWeightFileIsInitializationError) {
  ModelConfig config = tiny_config();
  config.pretrained = PretrainedSource::face_recognition_weights;
  config.pretrained_path = "/nonexistent/weights.dsc";
  EXPECT_THROW(Model{config}, InitializationError);
}

TEST(ResNet50, EvalForwardIsFiniteAndDeterministic) {
  ModelConfig config;
  config.backbone = Backbone::resnet50;
  config.input_size = 64;
  config.init_seed = 3;
  Model model(config);
  const Tensor batch = unit_batch(1, 64, 13);
  const Tensor a = model.forward(batch, false);
  const Tensor b = model.forward(batch, false);
  EXPECT_TRUE(std::isfinite(a.data[0]));
  EXPECT_EQ(a.data, b.data);
}

TEST(ModelConfig, ValidationCatchesBadValues) {
  ModelConfig config = tiny_config();
  config.head_widths = {0, 128};
  EXPECT_THROW(config.validate(), ConfigError);
  config = tiny_config();
  config.input_size = 4;
  EXPECT_THROW(config.validate(), ConfigError);
  config = tiny_config();
  config.norm_std = {0.5, 0.0, 0.5};
  EXPECT_THROW(config.validate(), ConfigError);
}
