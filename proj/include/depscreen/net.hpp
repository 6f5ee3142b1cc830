#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "depscreen/common.hpp"
#include "depscreen/container.hpp"
#include "depscreen/nn.hpp"
#include "depscreen/tensor.hpp"

namespace depscreen {

enum class Backbone { resnet50, tiny_test };
enum class PretrainedSource { face_recognition_weights, generic_imagenet, random };

inline const char* backbone_name(Backbone b) {
  return b == Backbone::resnet50 ? "resnet50" : "tiny_test";
}
inline Backbone backbone_from_name(const std::string& s) {
  if (s == "resnet50") return Backbone::resnet50;
  if (s == "tiny_test") return Backbone::tiny_test;
  throw ConfigError("unknown backbone: '" + s + "'");
}

inline const char* pretrained_source_name(PretrainedSource p) {
  switch (p) {
    case PretrainedSource::face_recognition_weights: return "face_recognition_weights";
    case PretrainedSource::generic_imagenet: return "generic_imagenet";
    case PretrainedSource::random: return "random";
  }
  return "?";
}
inline PretrainedSource pretrained_source_from_name(const std::string& s) {
  if (s == "face_recognition_weights") return PretrainedSource::face_recognition_weights;
  if (s == "generic_imagenet") return PretrainedSource::generic_imagenet;
  if (s == "random") return PretrainedSource::random;
  throw ConfigError("unknown pretrained source: '" + s + "'");
}

struct ModelConfig {
  Backbone backbone = Backbone::resnet50;
  PretrainedSource pretrained = PretrainedSource::random;
  std::filesystem::path pretrained_path;
  std::array<int, 2> head_widths{512, 128};
  int input_size = 224;
  // channel statistics applied inside forward(); recorded in checkpoints
  std::array<double, 3> norm_mean{0.5, 0.5, 0.5};
  std::array<double, 3> norm_std{0.5, 0.5, 0.5};
  std::uint64_t init_seed = 0;

  void validate() const {
    if (head_widths[0] <= 0 || head_widths[1] <= 0) {
      throw ConfigError("head widths must be positive");
    }
    if (input_size < 8) throw ConfigError("input_size must be >= 8");
    for (double s : norm_std) {
      if (!(s > 0.0)) throw ConfigError("norm_std entries must be positive");
    }
  }

  bool operator==(const ModelConfig& o) const {
    return backbone == o.backbone && head_widths == o.head_widths &&
           input_size == o.input_size && norm_mean == o.norm_mean && norm_std == o.norm_std;
  }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"backbone", backbone_name(c.backbone)},
          {"pretrained", pretrained_source_name(c.pretrained)},
          {"pretrained_path", c.pretrained_path.string()},
          {"head_widths", c.head_widths},
          {"input_size", c.input_size},
          {"norm_mean", c.norm_mean},
          {"norm_std", c.norm_std},
          {"init_seed", c.init_seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.backbone = backbone_from_name(j.at("backbone").get<std::string>());
  c.pretrained = pretrained_source_from_name(j.at("pretrained").get<std::string>());
  c.pretrained_path = j.value("pretrained_path", std::string());
  c.head_widths = j.at("head_widths").get<std::array<int, 2>>();
  c.input_size = j.at("input_size").get<int>();
  c.norm_mean = j.at("norm_mean").get<std::array<double, 3>>();
  c.norm_std = j.at("norm_std").get<std::array<double, 3>>();
  c.init_seed = j.value("init_seed", std::uint64_t{0});
  return c;
}

// BDI-II range enforcement; inference only, never inside the training loss.
inline double clamp_score(double raw) {
  if (!is_finite(raw)) throw NumericError("non-finite score");
  return std::min(std::max(raw, 0.0), 63.0);
}

constexpr const char* kModelVersionTag = "depscreen-model-v1";

// ResNet-50 (or the desk-scale tiny backbone) feeding a scalar regression
// head of two fully connected layers. Every parameter stays trainable.
class Model {
 public:
  explicit Model(const ModelConfig& config, bool load_pretrained = true) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(config_.init_seed);
    build_backbone(rng);
    build_head(rng);
    params_.clear();
    backbone_.collect_params("backbone", params_);
    head_.collect_params("head", params_);
    buffers_.clear();
    backbone_.collect_buffers("backbone", buffers_);
    head_.collect_buffers("head", buffers_);
    if (load_pretrained && config_.pretrained != PretrainedSource::random) {
      load_pretrained_backbone();
    }
  }

  const ModelConfig& config() const { return config_; }
  std::int64_t feature_dim() const { return feature_dim_; }
  std::int64_t& step_counter() { return step_counter_; }
  std::int64_t step_counter() const { return step_counter_; }

  std::vector<Param*>& params() { return params_; }
  const std::vector<std::pair<std::string, Tensor*>>& buffers() const { return buffers_; }

  void zero_grad() {
    for (Param* p : params_) p->grad.zero();
  }

  // batch: [B, 3, input_size, input_size] with values in [0,1]; returns [B]
  // scores. Evaluation mode (train = false) is deterministic.
  Tensor forward(const Tensor& batch, bool train) {
    validate_batch(batch);
    Tensor normalized(batch.shape);
    const int B = static_cast<int>(batch.shape[0]);
    const std::int64_t plane =
        static_cast<std::int64_t>(config_.input_size) * config_.input_size;
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < 3; ++c) {
        const double mean = config_.norm_mean[c];
        const double inv_std = 1.0 / config_.norm_std[c];
        const std::int64_t off = (static_cast<std::int64_t>(b) * 3 + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          normalized.data[off + i] = (batch.data[off + i] - mean) * inv_std;
        }
      }
    }
    const Tensor features = backbone_.forward(normalized, train);
    const Tensor raw = head_.forward(features, train);  // [B, 1]
    Tensor scores({B});
    for (int b = 0; b < B; ++b) scores.data[b] = raw.data[b];
    if (!scores.all_finite()) throw NumericError("model produced non-finite scores");
    return scores;
  }

  void backward(const Tensor& dscores) {
    const int B = static_cast<int>(dscores.shape.at(0));
    Tensor draw({B, 1});
    for (int b = 0; b < B; ++b) draw.data[b] = dscores.data[b];
    backbone_.backward(head_.backward(draw));
  }

  std::int64_t head_parameter_count() const {
    std::int64_t n = 0;
    for (const Param* p : params_) {
      if (p->name.rfind("head.", 0) == 0) n += p->value.numel();
    }
    return n;
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const Param* p : params_) n += p->value.numel();
    return n;
  }

 private:
  void validate_batch(const Tensor& batch) const {
    if (batch.shape.size() != 4 || batch.shape[1] != 3 ||
        batch.shape[2] != config_.input_size || batch.shape[3] != config_.input_size) {
      throw InvalidInputError("expected batch of shape [B,3," +
                              std::to_string(config_.input_size) + "," +
                              std::to_string(config_.input_size) + "]");
    }
    for (double v : batch.data) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw InvalidInputError("batch values must lie in [0,1]");
      }
    }
  }

  void build_backbone(std::mt19937_64& rng) {
    using namespace nn;
    if (config_.backbone == Backbone::resnet50) {
      feature_dim_ = 2048;
      auto* stem = static_cast<Sequential*>(
          backbone_.add("stem", std::make_unique<Sequential>()));
      stem->add("conv", std::make_unique<Conv2d>(3, 64, 7, 2, 3, false, rng));
      stem->add("bn", std::make_unique<BatchNorm2d>(64));
      stem->add("relu", std::make_unique<ReLU>());
      stem->add("pool", std::make_unique<MaxPool2d>(3, 2, 1));
      const int blocks[4] = {3, 4, 6, 3};
      int in_ch = 64;
      for (int stage = 0; stage < 4; ++stage) {
        const int mid = 64 << stage;
        const int out = mid * 4;
        auto* seq = static_cast<Sequential*>(backbone_.add(
            "layer" + std::to_string(stage + 1), std::make_unique<Sequential>()));
        for (int blk = 0; blk < blocks[stage]; ++blk) {
          const int stride = (blk == 0 && stage > 0) ? 2 : 1;
          seq->add(std::to_string(blk),
                   std::make_unique<Bottleneck>(blk == 0 ? in_ch : out, mid, out, stride, rng));
        }
        in_ch = out;
      }
      backbone_.add("gap", std::make_unique<GlobalAvgPool>());
    } else {
      feature_dim_ = 64;
      backbone_.add("conv1", std::make_unique<Conv2d>(3, 16, 3, 2, 1, false, rng));
      backbone_.add("bn1", std::make_unique<BatchNorm2d>(16));
      backbone_.add("relu1", std::make_unique<ReLU>());
      backbone_.add("conv2", std::make_unique<Conv2d>(16, 32, 3, 2, 1, false, rng));
      backbone_.add("bn2", std::make_unique<BatchNorm2d>(32));
      backbone_.add("relu2", std::make_unique<ReLU>());
      backbone_.add("conv3", std::make_unique<Conv2d>(32, 64, 3, 2, 1, false, rng));
      backbone_.add("bn3", std::make_unique<BatchNorm2d>(64));
      backbone_.add("relu3", std::make_unique<ReLU>());
      backbone_.add("gap", std::make_unique<GlobalAvgPool>());
    }
  }

  void build_head(std::mt19937_64& rng) {
    using namespace nn;
    head_.add("fc1", std::make_unique<Linear>(static_cast<int>(feature_dim_),
                                              config_.head_widths[0], rng));
    head_.add("relu1", std::make_unique<ReLU>());
    head_.add("fc2", std::make_unique<Linear>(config_.head_widths[0],
                                              config_.head_widths[1], rng));
    head_.add("relu2", std::make_unique<ReLU>());
    head_.add("out", std::make_unique<Linear>(config_.head_widths[1], 1, rng));
  }

  void load_pretrained_backbone() {
    if (config_.pretrained_path.empty() ||
        !std::filesystem::exists(config_.pretrained_path)) {
      throw InitializationError("pretrained weight file not found: " +
                                config_.pretrained_path.string());
    }
    Container c;
    try {
      c = read_container(config_.pretrained_path);
    } catch (const Error& e) {
      throw InitializationError(std::string("cannot load pretrained weights: ") + e.what());
    }
    if (c.header.value("kind", "") != "weights") {
      throw InitializationError("not a weights file: " + config_.pretrained_path.string());
    }
    for (Param* p : params_) {
      if (p->name.rfind("backbone.", 0) != 0) continue;
      auto it = c.tensors.find(p->name);
      if (it == c.tensors.end()) {
        throw InitializationError("pretrained weights missing tensor: " + p->name);
      }
      if (it->second.shape != p->value.shape) {
        throw InitializationError("pretrained weights shape mismatch for " + p->name);
      }
      p->value = it->second;
    }
    for (auto& [name, buffer] : buffers_) {
      auto it = c.tensors.find(name);
      if (it != c.tensors.end()) {
        if (it->second.shape != buffer->shape) {
          throw InitializationError("pretrained weights shape mismatch for " + name);
        }
        *buffer = it->second;
      }
    }
  }

  ModelConfig config_;
  nn::Sequential backbone_;
  nn::Sequential head_;
  std::vector<Param*> params_;
  std::vector<std::pair<std::string, Tensor*>> buffers_;
  std::int64_t feature_dim_ = 0;
  std::int64_t step_counter_ = 0;
};

inline Model build_model(const ModelConfig& config) { return Model(config); }

// Writes a backbone weights file usable as a pretrained source.
inline void save_backbone_weights(Model& model, const std::filesystem::path& path,
                                  const std::string& provenance) {
  nlohmann::json header{{"kind", "weights"}, {"provenance", provenance}};
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (Param* p : model.params()) {
    if (p->name.rfind("backbone.", 0) == 0) tensors.emplace_back(p->name, &p->value);
  }
  for (const auto& [name, buffer] : model.buffers()) tensors.emplace_back(name, buffer);
  write_container(path, std::move(header), tensors);
}

// --- Checkpoints -----------------------------------------------------------
//
// A checkpoint bundles the model config + parameters + buffers, an opaque
// JSON block of trainer/optimizer scalars, and any extra state tensors
// (optimizer moments, slow weights). Raw doubles round-trip bit exactly.

struct Checkpoint {
  ModelConfig model_config;
  nlohmann::json state;  // epoch counter, best-dev metric, optimizer scalars
  std::map<std::string, Tensor> tensors;
  std::string version_tag;
};

inline void save_checkpoint(const std::filesystem::path& path, Model& model,
                            const nlohmann::json& state,
                            const std::vector<std::pair<std::string, const Tensor*>>&
                                extra_tensors = {}) {
  nlohmann::json header{{"kind", "checkpoint"},
                        {"version_tag", kModelVersionTag},
                        {"model_config", model_config_to_json(model.config())},
                        {"state", state},
                        {"step_counter", model.step_counter()}};
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (Param* p : model.params()) tensors.emplace_back(p->name, &p->value);
  for (const auto& [name, buffer] : model.buffers()) tensors.emplace_back(name, buffer);
  for (const auto& [name, t] : extra_tensors) tensors.emplace_back(name, t);
  write_container(path, std::move(header), tensors);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.header.value("kind", "") != "checkpoint") {
    throw CheckpointError("not a checkpoint: " + path.string());
  }
  Checkpoint ckpt;
  ckpt.version_tag = c.header.value("version_tag", "");
  if (ckpt.version_tag != kModelVersionTag) {
    throw CheckpointError("incompatible checkpoint version tag '" + ckpt.version_tag + "'");
  }
  try {
    ckpt.model_config = model_config_from_json(c.header.at("model_config"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint model config: ") + e.what());
  }
  ckpt.state = c.header.value("state", nlohmann::json::object());
  ckpt.state["step_counter"] = c.header.value("step_counter", std::int64_t{0});
  ckpt.tensors = std::move(c.tensors);
  return ckpt;
}

// Rebuilds the model architecture from the stored config and restores every
// parameter and buffer from the checkpoint.
inline Model restore_model(const Checkpoint& ckpt) {
  Model model(ckpt.model_config, /*load_pretrained=*/false);
  for (Param* p : model.params()) {
    auto it = ckpt.tensors.find(p->name);
    if (it == ckpt.tensors.end()) {
      throw CheckpointError("checkpoint missing tensor: " + p->name);
    }
    if (it->second.shape != p->value.shape) {
      throw CheckpointError("checkpoint shape mismatch for " + p->name);
    }
    p->value = it->second;
  }
  for (auto& [name, buffer] : model.buffers()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      throw CheckpointError("checkpoint missing buffer: " + name);
    }
    *buffer = it->second;
  }
  model.step_counter() = ckpt.state.value("step_counter", std::int64_t{0});
  return model;
}

}  // namespace depscreen
