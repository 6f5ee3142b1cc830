#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "depscreen/config.hpp"
#include "depscreen/corpus.hpp"
#include "depscreen/detect.hpp"
#include "depscreen/evalfuse.hpp"
#include "depscreen/synthetic.hpp"
#include "depscreen/trainer.hpp"
#include "depscreen/version.hpp"

namespace fs = std::filesystem;
using namespace depscreen;

namespace {

const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      // corpus / preprocessing
      "corpus_root", "corpus_layout", "labels_file", "corpus_name", "stride", "target_size",
      "detector_backend", "detector_min_confidence", "detector_model_path", "out_root",
      "workers",
      // shared data locations
      "manifest", "crops_root", "scores_dir",
      // training
      "mode", "batch_size", "max_epochs", "seed", "flip_probability", "brightness_range",
      "contrast_range", "saturation_range", "backbone", "pretrained_source", "pretrained_path",
      "input_size", "head_widths", "norm_mean", "norm_std", "lr", "beta1", "beta2",
      "epsilon", "lookahead_k",
      "lookahead_alpha", "plateau_factor", "plateau_patience", "plateau_min_lr",
      "plateau_threshold", "checkpoint_dir", "resume_checkpoint",
      // prediction / evaluation
      "checkpoint", "checkpoint_independent", "checkpoint_dependent", "eval_partition",
      "protocol", "fusion_weights",
  };
  return keys;
}

struct CliOptions {
  std::string config_path;
  std::optional<std::string> mode;
  std::optional<int> stride;
  std::optional<std::string> protocol;
  std::optional<std::string> weights;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
};

int worker_count(const Config& config) {
  if (const char* env = std::getenv("DEPSCREEN_WORKERS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      throw ConfigError("DEPSCREEN_WORKERS must be an integer");
    }
  }
  return std::max(1, config.get_int("workers", 1));
}

void write_run_info(const fs::path& out_dir, const std::string& command,
                    const Config& config, std::uint64_t seed, int workers) {
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "run_info.txt");
  out << "command = " << command << "\n";
  out << "config = " << config.path().string() << "\n";
  out << "config_hash = " << config.hash_hex() << "\n";
  out << "seed = " << seed << "\n";
  out << "workers = " << workers << "\n";
  out << "version = " << kVersion << "\n";
}

DetectorConfig detector_config_from(const Config& config) {
  DetectorConfig det;
  const std::string backend = config.get_string("detector_backend", "synthetic_oracle");
  if (backend == "synthetic_oracle") {
    det.backend = DetectorBackend::synthetic_oracle;
  } else if (backend == "pretrained") {
    det.backend = DetectorBackend::pretrained;
    det.model_path = config.get_path("detector_model_path");
  } else {
    throw ConfigError("detector_backend must be synthetic_oracle or pretrained");
  }
  det.min_confidence = config.get_double("detector_min_confidence", 0.9);
  return det;
}

std::array<double, 3> parse_triple(const Config& config, const std::string& key,
                                   std::array<double, 3> fallback) {
  if (!config.has(key)) return fallback;
  std::istringstream in(config.get_string(key));
  std::array<double, 3> out{};
  std::string field;
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(in, field, ',')) {
      throw ConfigError("config key '" + key + "' must be three comma-separated numbers");
    }
    out[i] = std::stod(field);
  }
  return out;
}

ModelConfig model_config_from(const Config& config) {
  ModelConfig model;
  model.backbone = backbone_from_name(config.get_string("backbone", "resnet50"));
  model.pretrained =
      pretrained_source_from_name(config.get_string("pretrained_source", "random"));
  model.pretrained_path = config.get_path("pretrained_path", "");
  const auto widths = config.get_pair("head_widths", {512.0, 128.0});
  model.head_widths = {static_cast<int>(widths.first), static_cast<int>(widths.second)};
  model.input_size = config.get_int("input_size", 224);
  model.norm_mean = parse_triple(config, "norm_mean", model.norm_mean);
  model.norm_std = parse_triple(config, "norm_std", model.norm_std);
  return model;
}

AugmentPolicy augment_policy_from(const Config& config) {
  AugmentPolicy policy;
  policy.flip_probability = config.get_double("flip_probability", 0.5);
  const auto b = config.get_pair("brightness_range", {0.8, 1.2});
  const auto c = config.get_pair("contrast_range", {0.8, 1.2});
  const auto s = config.get_pair("saturation_range", {0.8, 1.2});
  policy.brightness = {b.first, b.second};
  policy.contrast = {c.first, c.second};
  policy.saturation = {s.first, s.second};
  return policy;
}

TrainConfig train_config_from(const Config& config, const CliOptions& opts) {
  TrainConfig train;
  const std::string mode = opts.mode ? *opts.mode : config.get_string("mode");
  train.stream = alignment_mode_from_name(mode);
  train.batch_size = config.get_int("batch_size", 32);
  train.max_epochs = config.get_int("max_epochs", 10);
  train.seed = opts.seed ? *opts.seed : config.get_uint64("seed", 0);
  train.augment = augment_policy_from(config);
  train.augment.seed = train.seed;
  train.model = model_config_from(config);
  train.radam.lr = config.get_double("lr", 3e-4);
  train.radam.beta1 = config.get_double("beta1", 0.9);
  train.radam.beta2 = config.get_double("beta2", 0.999);
  train.radam.epsilon = config.get_double("epsilon", 1e-8);
  train.lookahead.k = config.get_int("lookahead_k", 5);
  train.lookahead.alpha = config.get_double("lookahead_alpha", 0.5);
  train.plateau.factor = config.get_double("plateau_factor", 0.5);
  train.plateau.patience = config.get_int("plateau_patience", 5);
  train.plateau.min_lr = config.get_double("plateau_min_lr", 1e-6);
  train.plateau.threshold = config.get_double("plateau_threshold", 1e-4);
  train.manifest_path = config.get_path("manifest");
  train.crops_root = config.get_path("crops_root");
  return train;
}

FusionWeights weights_from(const Config& config, const CliOptions& opts) {
  std::pair<double, double> pair{0.5, 0.5};
  if (opts.weights) {
    const auto comma = opts.weights->find(',');
    if (comma == std::string::npos) {
      throw ConfigError("--weights must be two comma-separated numbers");
    }
    pair = {std::stod(opts.weights->substr(0, comma)),
            std::stod(opts.weights->substr(comma + 1))};
  } else {
    pair = config.get_pair("fusion_weights", {0.5, 0.5});
  }
  return FusionWeights::make(pair.first, pair.second);
}

Partition partition_from(const Config& config) {
  return partition_from_name(config.get_string("eval_partition", "test"));
}

Protocol protocol_from(const Config& config, const CliOptions& opts) {
  const std::string name =
      opts.protocol ? *opts.protocol : config.get_string("protocol", "separated");
  return protocol_from_name(name);
}

fs::path out_dir_from(const Config& config, const CliOptions& opts) {
  if (opts.out) return *opts.out;
  return config.get_path("out_root");
}

int cmd_preprocess(const Config& config, const CliOptions& opts) {
  const int stride = opts.stride ? *opts.stride : config.get_int("stride", 1);
  const Manifest manifest = build_manifest(
      config.get_path("corpus_root"),
      layout_from_name(config.get_string("corpus_layout", "generic")),
      config.get_path("labels_file"), stride, config.get_string("corpus_name", ""));
  const fs::path out = out_dir_from(config, opts);
  const int workers = worker_count(config);
  write_run_info(out, "preprocess", config, config.get_uint64("seed", 0), workers);
  save_manifest(manifest, out / "manifest.tsv");

  const DetectorConfig detector = detector_config_from(config);
  const int target = config.get_int("target_size", 224);
  std::vector<AlignmentMode> modes;
  if (opts.mode) {
    modes.push_back(alignment_mode_from_name(*opts.mode));
  } else {
    modes = {AlignmentMode::pose_independent, AlignmentMode::pose_dependent};
  }

  bool any_failed = false;
  for (AlignmentMode mode : modes) {
    const PreprocessReport report =
        extract_and_align(manifest, detector, mode, target, out, workers);
    const std::string name = alignment_mode_name(mode);
    save_preprocess_report(report, out / ("preprocess_report_" + name + ".txt"));
    int processed = 0, skipped = 0, flagged = 0;
    for (const auto& v : report.videos) {
      processed += v.processed;
      skipped += v.no_face_skipped;
      flagged += v.padding_flagged;
      if (v.failed) {
        any_failed = true;
        std::cerr << "error: video '" << v.video_id << "' produced no usable frames ("
                  << name << ")\n";
      }
    }
    std::cout << name << ": processed " << processed << " frames, skipped " << skipped
              << ", padding flagged " << flagged << "\n";
  }
  if (any_failed) {
    std::cerr << "preprocess: some videos produced no usable frames; see the reports under "
              << out << "\n";
    return 1;
  }
  std::cout << "manifest: " << (out / "manifest.tsv") << " (" << manifest.records.size()
            << " videos)\n";
  return 0;
}

int cmd_train(const Config& config, const CliOptions& opts) {
  TrainConfig train = train_config_from(config, opts);
  const fs::path out = out_dir_from(config, opts);
  const std::string mode_name = alignment_mode_name(train.stream);
  train.checkpoint_dir =
      config.get_path("checkpoint_dir", out / ("checkpoints_" + mode_name));
  write_run_info(out, "train", config, train.seed, 1);

  TrainResult result;
  if (config.has("resume_checkpoint")) {
    result = resume_training(config.get_path("resume_checkpoint"), train);
  } else {
    result = train_stream(train);
  }
  save_train_log(result.log, out / ("trainlog_" + mode_name + ".tsv"));
  std::cout << "trained " << mode_name << " for " << result.log.epochs.size()
            << " epochs; best dev MAE " << result.best_dev_mae << " at epoch "
            << result.best_epoch << "\n";
  std::cout << "checkpoints: " << result.last_checkpoint << " (last), "
            << result.best_checkpoint << " (best)\n";
  return 0;
}

int cmd_predict(const Config& config, const CliOptions& opts) {
  const std::string mode_name = opts.mode ? *opts.mode : config.get_string("mode");
  const AlignmentMode mode = alignment_mode_from_name(mode_name);
  fs::path ckpt_path;
  if (config.has("checkpoint")) {
    ckpt_path = config.get_path("checkpoint");
  } else {
    ckpt_path = mode == AlignmentMode::pose_independent
                    ? config.get_path("checkpoint_independent")
                    : config.get_path("checkpoint_dependent");
  }
  if (!fs::exists(ckpt_path)) {
    throw ConfigError("checkpoint not found: " + ckpt_path.string());
  }
  const fs::path out = out_dir_from(config, opts);
  write_run_info(out, "predict", config, config.get_uint64("seed", 0), 1);

  Manifest manifest = load_manifest(config.get_path("manifest"));
  const Partition partition = partition_from(config);
  Manifest selected;
  selected.corpus_name = manifest.corpus_name;
  selected.stride = manifest.stride;
  for (const VideoRecord& r : manifest.records) {
    if (r.partition == partition) selected.records.push_back(r);
  }
  if (selected.records.empty()) {
    throw ConfigError(std::string("no videos in partition ") + partition_name(partition));
  }
  std::sort(selected.records.begin(), selected.records.end(),
            [](const VideoRecord& a, const VideoRecord& b) { return a.video_id < b.video_id; });
  attach_crop_paths(selected, config.get_path("crops_root"), mode);

  Model model = restore_model(load_checkpoint(ckpt_path));
  std::vector<StreamPrediction> preds;
  std::vector<VideoScoreRow> rows;
  for (const VideoRecord& rec : selected.records) {
    StreamPrediction p = predict_video(model, rec, mode, config.get_int("batch_size", 32));
    rows.push_back({rec.video_id, rec.subject_id, rec.task, p.video_score,
                    static_cast<double>(rec.bdi_score)});
    preds.push_back(std::move(p));
  }
  save_frame_scores(preds, out / ("frame_scores_" + mode_name + ".csv"));
  save_video_scores(rows, mode_name, out / ("video_scores_" + mode_name + ".csv"));
  std::cout << "predicted " << preds.size() << " videos (" << mode_name << ", "
            << partition_name(partition) << ")\n";
  return 0;
}

int cmd_fuse(const Config& config, const CliOptions& opts) {
  const fs::path scores_dir = config.get_path("scores_dir");
  const FusionWeights weights = weights_from(config, opts);
  const fs::path out = out_dir_from(config, opts);
  write_run_info(out, "fuse", config, config.get_uint64("seed", 0), 1);

  const auto independent = load_video_scores(scores_dir / "video_scores_pose_independent.csv");
  const auto dependent = load_video_scores(scores_dir / "video_scores_pose_dependent.csv");
  std::map<std::string, const VideoScoreRow*> dep_by_id;
  for (const VideoScoreRow& r : dependent) dep_by_id[r.video_id] = &r;

  std::vector<VideoScoreRow> fused;
  for (const VideoScoreRow& ind : independent) {
    auto it = dep_by_id.find(ind.video_id);
    if (it == dep_by_id.end()) {
      throw PairingError("no pose_dependent score for video '" + ind.video_id + "'");
    }
    VideoScoreRow row = ind;
    row.score = clamp_score(weights.independent * ind.score +
                            weights.dependent * it->second->score);
    fused.push_back(row);
  }
  if (fused.size() != dependent.size()) {
    throw PairingError("stream score files cover different video sets");
  }
  save_video_scores(fused, "fused", out / "video_scores_fused.csv");
  std::cout << "fused " << fused.size() << " videos (weights " << weights.independent << ","
            << weights.dependent << ")\n";
  return 0;
}

int cmd_evaluate(const Config& config, const CliOptions& opts) {
  EvaluateInputs inputs;
  inputs.manifest = load_manifest(config.get_path("manifest"));
  inputs.crops_root = config.get_path("crops_root");
  inputs.checkpoint_independent = config.get_path("checkpoint_independent");
  inputs.checkpoint_dependent = config.get_path("checkpoint_dependent");
  inputs.weights = weights_from(config, opts);
  inputs.protocol = protocol_from(config, opts);
  inputs.partition = partition_from(config);
  inputs.batch_size = config.get_int("batch_size", 32);
  const fs::path out = out_dir_from(config, opts);
  write_run_info(out, "evaluate", config, config.get_uint64("seed", 0), 1);

  const EvalReport report = evaluate(inputs, out);
  std::cout << "protocol " << protocol_name(report.protocol) << ": " << report.unit_count
            << " units\n";
  std::cout << "pose_independent: MAE " << report.independent_mae << ", RMSE "
            << report.independent_rmse << "\n";
  std::cout << "pose_dependent:   MAE " << report.dependent_mae << ", RMSE "
            << report.dependent_rmse << "\n";
  std::cout << "fused:            MAE " << report.fused_mae << ", RMSE " << report.fused_rmse
            << "\n";
  std::cout << "report: " << (out / "report.txt") << "\n";
  return 0;
}

int cmd_report(const Config& config, const CliOptions& opts) {
  const fs::path scores_dir = config.get_path("scores_dir");
  const Manifest manifest = load_manifest(config.get_path("manifest"));
  const fs::path out = out_dir_from(config, opts);
  write_run_info(out, "report", config, config.get_uint64("seed", 0), 1);

  const EvalReport report = recompute_report(
      manifest, scores_dir / "frame_scores_pose_independent.csv",
      scores_dir / "frame_scores_pose_dependent.csv", weights_from(config, opts),
      protocol_from(config, opts), partition_from(config));
  save_report(report, out / "report.txt");
  std::ofstream errs(out / "error_distribution.csv");
  errs << "rank,abs_error\n";
  for (size_t i = 0; i < report.sorted_abs_errors.size(); ++i) {
    errs << i << "," << report.sorted_abs_errors[i] << "\n";
  }
  save_error_distribution_svg(report.sorted_abs_errors, out / "error_distribution.svg");
  std::cout << "recomputed report from persisted scores: fused MAE " << report.fused_mae
            << ", RMSE " << report.fused_rmse << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"depscreen: BDI-II depression severity estimation from facial video"};
  app.require_subcommand(1);

  CliOptions opts;
  std::string command;
  for (const auto& [name, desc] :
       std::vector<std::pair<std::string, std::string>>{
           {"preprocess", "detect, align and crop faces for one or both streams"},
           {"train", "train one alignment stream"},
           {"predict", "score a partition with one stream checkpoint"},
           {"evaluate", "run both stream checkpoints and write the full report"},
           {"fuse", "combine persisted per-stream video scores"},
           {"report", "recompute the report from persisted frame scores"}}) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", opts.config_path, "flat key = value configuration file")
        ->required();
    sub->add_option("--mode", opts.mode,
                    "alignment stream: pose_dependent | pose_independent");
    sub->add_option("--stride", opts.stride, "frame sampling stride override");
    sub->add_option("--protocol", opts.protocol, "separated | joint | single");
    sub->add_option("--weights", opts.weights, "fusion weights, e.g. 0.5,0.5");
    sub->add_option("--out", opts.out, "output directory override");
    sub->add_option("--seed", opts.seed, "seed override");
    sub->callback([&command, name = name]() { command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const Config config = Config::load(opts.config_path, known_config_keys());
    if (command == "preprocess") return cmd_preprocess(config, opts);
    if (command == "train") return cmd_train(config, opts);
    if (command == "predict") return cmd_predict(config, opts);
    if (command == "evaluate") return cmd_evaluate(config, opts);
    if (command == "fuse") return cmd_fuse(config, opts);
    if (command == "report") return cmd_report(config, opts);
    std::cerr << "error: no command selected\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
