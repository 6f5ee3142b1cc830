#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "depscreen/augment.hpp"
#include "depscreen/corpus.hpp"
#include "depscreen/evalfuse.hpp"
#include "depscreen/net.hpp"
#include "depscreen/optim.hpp"

namespace depscreen {

inline double l1_loss(const std::vector<double>& predictions,
                      const std::vector<double>& labels) {
  check_pairs(predictions, labels, "l1_loss");
  double sum = 0.0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    sum += std::abs(predictions[i] - labels[i]);
  }
  return sum / static_cast<double>(predictions.size());
}

struct TrainConfig {
  AlignmentMode stream = AlignmentMode::pose_independent;
  int batch_size = 32;
  int max_epochs = 10;
  std::uint64_t seed = 0;
  AugmentPolicy augment;
  ModelConfig model;
  RAdamOptions radam;
  LookaheadOptions lookahead;
  PlateauOptions plateau;
  std::filesystem::path manifest_path;
  std::filesystem::path crops_root;
  std::filesystem::path checkpoint_dir;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    augment.validate();
    model.validate();
    radam.validate();
    lookahead.validate();
    plateau.validate();
  }
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // mean absolute frame error over the epoch
  double dev_mae = 0.0;     // video-level, development partition
  double dev_rmse = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
};

struct TrainResult {
  TrainLog log;
  int best_epoch = 0;
  double best_dev_mae = 0.0;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
};

inline void save_train_log(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write train log: " + path.string());
  out << "epoch\ttrain_l1\tdev_mae\tdev_rmse\tlr\twall_seconds\n";
  for (const EpochLog& e : log.epochs) {
    out << e.epoch << "\t" << detail::format_score(e.train_loss) << "\t"
        << detail::format_score(e.dev_mae) << "\t" << detail::format_score(e.dev_rmse) << "\t"
        << detail::format_score(e.lr) << "\t" << e.wall_seconds << "\n";
  }
}

namespace detail {

struct FrameItem {
  std::filesystem::path path;
  double label = 0.0;
};

// Per-stream frame-level training session. Every frame inherits its
// video's BDI-II score as the regression target.
class TrainSession {
 public:
  explicit TrainSession(const TrainConfig& config)
      : config_(config), radam_(config.radam), lookahead_(config.lookahead),
        plateau_(config.plateau) {
    config_.validate();

    Manifest manifest = load_manifest(config_.manifest_path);
    Manifest needed;  // training + development only; test crops are not required
    needed.corpus_name = manifest.corpus_name;
    needed.stride = manifest.stride;
    for (const VideoRecord& r : manifest.records) {
      if (r.partition != Partition::test) needed.records.push_back(r);
    }
    attach_crop_paths(needed, config_.crops_root, config_.stream);
    for (const VideoRecord& r : needed.records) {
      if (r.partition == Partition::training) {
        for (const auto& path : r.frame_paths) {
          train_items_.push_back({path, static_cast<double>(r.bdi_score)});
        }
      } else {
        dev_records_.push_back(r);
      }
    }
    if (train_items_.empty()) throw ConfigError("training partition has no crops");
    if (dev_records_.empty()) throw ConfigError("development partition is empty");
    std::sort(dev_records_.begin(), dev_records_.end(),
              [](const VideoRecord& a, const VideoRecord& b) {
                return a.video_id < b.video_id;
              });

    ModelConfig model_config = config_.model;
    model_config.init_seed = config_.seed;
    model_ = std::make_unique<Model>(model_config);
    lookahead_.attach(model_->params());  // slow weights start at theta_0
  }

  // Resume path: restores model/optimizer/scheduler state and the log.
  TrainSession(const TrainConfig& config, const Checkpoint& ckpt) : TrainSession(config) {
    if (!(ckpt.model_config == model_->config())) {
      throw CheckpointError("checkpoint model config does not match the training config");
    }
    const std::string stored_stream = ckpt.state.value("stream", "");
    if (stored_stream != alignment_mode_name(config_.stream)) {
      throw CheckpointError("checkpoint was trained on stream '" + stored_stream +
                            "', not '" + alignment_mode_name(config_.stream) + "'");
    }
    *model_ = restore_model(ckpt);
    radam_.restore(ckpt.state.at("radam"), ckpt.tensors, model_->params());
    lookahead_.restore(ckpt.state.at("lookahead"), ckpt.tensors, model_->params());
    plateau_.restore(ckpt.state.at("plateau"));
    start_epoch_ = ckpt.state.at("epoch").get<int>();
    best_epoch_ = ckpt.state.at("best_epoch").get<int>();
    best_dev_mae_ = ckpt.state.at("best_dev_mae").get<double>();
    for (const auto& row : ckpt.state.value("log", nlohmann::json::array())) {
      log_.epochs.push_back({row.at("epoch").get<int>(), row.at("train_loss").get<double>(),
                             row.at("dev_mae").get<double>(), row.at("dev_rmse").get<double>(),
                             row.at("lr").get<double>(), row.at("wall_seconds").get<double>()});
    }
  }

  TrainResult run() {
    namespace fs = std::filesystem;
    fs::create_directories(config_.checkpoint_dir);
    const fs::path last_path = config_.checkpoint_dir / "last.ckpt";
    const fs::path best_path = config_.checkpoint_dir / "best.ckpt";

    for (int epoch = start_epoch_ + 1; epoch <= config_.max_epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      const double train_loss = run_epoch(epoch);
      const auto [dev_mae, dev_rmse] = evaluate_dev();
      plateau_.step(dev_mae, radam_.lr());

      EpochLog entry;
      entry.epoch = epoch;
      entry.train_loss = train_loss;
      entry.dev_mae = dev_mae;
      entry.dev_rmse = dev_rmse;
      entry.lr = radam_.lr();
      entry.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log_.epochs.push_back(entry);

      const bool improved = dev_mae < best_dev_mae_;
      if (improved) {
        best_dev_mae_ = dev_mae;
        best_epoch_ = epoch;
      }
      save(last_path, epoch);
      if (improved) save(best_path, epoch);
    }

    TrainResult result;
    result.log = log_;
    result.best_epoch = best_epoch_;
    result.best_dev_mae = best_dev_mae_;
    result.last_checkpoint = last_path;
    result.best_checkpoint = best_path;
    return result;
  }

 private:
  double run_epoch(int epoch) {
    std::mt19937_64 rng(mix_seed(config_.seed, static_cast<std::uint64_t>(epoch)));
    std::vector<size_t> order(train_items_.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    const int size = model_->config().input_size;
    const std::int64_t plane = static_cast<std::int64_t>(size) * size;
    double loss_sum = 0.0;
    std::int64_t seen = 0;

    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config_.batch_size)) {
      const size_t count =
          std::min(order.size() - start, static_cast<size_t>(config_.batch_size));
      Tensor batch({static_cast<std::int64_t>(count), 3, size, size});
      std::vector<double> labels(count);
      for (size_t i = 0; i < count; ++i) {
        const FrameItem& item = train_items_[order[start + i]];
        Image img = read_ppm(item.path);
        if (img.height != size || img.width != size) {
          throw ConfigError("crop size " + std::to_string(img.width) +
                            " does not match model input " + std::to_string(size) + ": " +
                            item.path.string());
        }
        const TransformRecord transform = sample_augmentation(config_.augment, rng);
        img = apply_transform(img, transform);
        for (int c = 0; c < 3; ++c) {
          for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
              batch.data[(i * 3 + c) * plane + static_cast<std::int64_t>(y) * size + x] =
                  img.at(y, x, c);
            }
          }
        }
        labels[i] = item.label;
      }

      const Tensor scores = model_->forward(batch, /*train=*/true);
      std::vector<double> preds(scores.data.begin(), scores.data.end());
      const double loss = l1_loss(preds, labels);
      Tensor dscores({static_cast<std::int64_t>(count)});
      for (size_t i = 0; i < count; ++i) {
        const double diff = preds[i] - labels[i];
        dscores.data[i] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        dscores.data[i] /= static_cast<double>(count);
      }
      model_->zero_grad();
      model_->backward(dscores);
      radam_.step(model_->params());
      lookahead_.after_step(model_->params());
      ++model_->step_counter();

      loss_sum += loss * static_cast<double>(count);
      seen += static_cast<std::int64_t>(count);
    }
    return loss_sum / static_cast<double>(seen);
  }

  std::pair<double, double> evaluate_dev() {
    std::vector<double> preds, labels;
    for (const VideoRecord& rec : dev_records_) {
      const StreamPrediction p =
          predict_video(*model_, rec, config_.stream, config_.batch_size);
      preds.push_back(p.video_score);
      labels.push_back(static_cast<double>(rec.bdi_score));
    }
    return {mae(preds, labels), rmse(preds, labels)};
  }

  void save(const std::filesystem::path& path, int epoch) {
    nlohmann::json log_rows = nlohmann::json::array();
    for (const EpochLog& e : log_.epochs) {
      log_rows.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"dev_mae", e.dev_mae},
                          {"dev_rmse", e.dev_rmse},
                          {"lr", e.lr},
                          {"wall_seconds", e.wall_seconds}});
    }
    nlohmann::json state{{"epoch", epoch},
                         {"best_epoch", best_epoch_},
                         {"best_dev_mae", best_dev_mae_},
                         {"seed", config_.seed},
                         {"stream", alignment_mode_name(config_.stream)},
                         {"radam", radam_.state_scalars()},
                         {"lookahead", lookahead_.state_scalars()},
                         {"plateau", plateau_.state_scalars()},
                         {"log", std::move(log_rows)}};
    std::vector<std::pair<std::string, const Tensor*>> extra = radam_.state_tensors();
    for (auto& t : lookahead_.state_tensors()) extra.push_back(t);
    save_checkpoint(path, *model_, state, extra);
  }

  TrainConfig config_;
  std::unique_ptr<Model> model_;
  RAdam radam_;
  Lookahead lookahead_;
  PlateauScheduler plateau_;
  std::vector<FrameItem> train_items_;
  std::vector<VideoRecord> dev_records_;
  TrainLog log_;
  int start_epoch_ = 0;
  int best_epoch_ = 0;
  double best_dev_mae_ = std::numeric_limits<double>::infinity();
};

}  // namespace detail

inline TrainResult train_stream(const TrainConfig& config) {
  detail::TrainSession session(config);
  return session.run();
}

// Continues an interrupted run. Epoch ordering, shuffles and augmentation
// draws are derived from (seed, epoch), so the continued trajectory matches
// an uninterrupted run exactly.
inline TrainResult resume_training(const std::filesystem::path& checkpoint_path,
                                   const TrainConfig& config) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  detail::TrainSession session(config, ckpt);
  return session.run();
}

}  // namespace depscreen
