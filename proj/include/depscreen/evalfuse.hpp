#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "depscreen/common.hpp"
#include "depscreen/corpus.hpp"
#include "depscreen/facegeom.hpp"
#include "depscreen/net.hpp"

namespace depscreen {

// Per-video prediction of one alignment stream. The video score is the
// arithmetic mean of the raw frame scores, clamped to the BDI-II range.
struct StreamPrediction {
  std::string video_id;
  AlignmentMode stream = AlignmentMode::pose_independent;
  std::vector<int> frame_indices;     // source frame index per score
  std::vector<double> frame_scores;   // raw (unclamped) model outputs
  double video_score = 0.0;
};

inline double video_score(const std::vector<double>& frame_scores) {
  if (frame_scores.empty()) throw NoPredictionError("video has no frame scores");
  double sum = 0.0;
  for (double s : frame_scores) sum += s;
  return clamp_score(sum / static_cast<double>(frame_scores.size()));
}

inline void check_pairs(const std::vector<double>& a, const std::vector<double>& b,
                        const char* who) {
  if (a.size() != b.size()) throw InvalidInputError(std::string(who) + ": length mismatch");
  if (a.empty()) throw InvalidInputError(std::string(who) + ": empty input");
}

inline double mae(const std::vector<double>& preds, const std::vector<double>& labels) {
  check_pairs(preds, labels, "mae");
  double sum = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) sum += std::abs(preds[i] - labels[i]);
  return sum / static_cast<double>(preds.size());
}

inline double rmse(const std::vector<double>& preds, const std::vector<double>& labels) {
  check_pairs(preds, labels, "rmse");
  double sum = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - labels[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(preds.size()));
}

inline std::vector<double> error_distribution(const std::vector<double>& preds,
                                              const std::vector<double>& labels) {
  check_pairs(preds, labels, "error_distribution");
  std::vector<double> errors(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) errors[i] = std::abs(preds[i] - labels[i]);
  std::sort(errors.begin(), errors.end());
  return errors;
}

struct FusionWeights {
  double independent = 0.5;
  double dependent = 0.5;

  static FusionWeights make(double w_independent, double w_dependent) {
    if (!(w_independent >= 0.0) || !(w_dependent >= 0.0)) {
      throw ParameterError("fusion weights must be nonnegative");
    }
    if (std::abs(w_independent + w_dependent - 1.0) > 1e-9) {
      throw ParameterError("fusion weights must sum to 1");
    }
    return {w_independent, w_dependent};
  }
};

inline double fuse_streams(const StreamPrediction& a, const StreamPrediction& b,
                           const FusionWeights& weights) {
  if (a.video_id != b.video_id) {
    throw PairingError("cannot fuse different videos: '" + a.video_id + "' vs '" +
                       b.video_id + "'");
  }
  if (a.stream == b.stream) {
    throw PairingError("cannot fuse two predictions of the same stream for '" +
                       a.video_id + "'");
  }
  const double s_independent =
      a.stream == AlignmentMode::pose_independent ? a.video_score : b.video_score;
  const double s_dependent =
      a.stream == AlignmentMode::pose_dependent ? a.video_score : b.video_score;
  return clamp_score(weights.independent * s_independent + weights.dependent * s_dependent);
}

// One scored video with its metadata, the unit of protocol arithmetic.
struct VideoScoreRow {
  std::string video_id;
  std::string subject_id;
  Task task = Task::single;
  double score = 0.0;
  double label = 0.0;
};

struct SubjectScore {
  std::string subject_id;
  double score = 0.0;
  double label = 0.0;
};

// Joint-task protocol: each subject's Northwind and Freeform scores are
// averaged into one per-subject prediction.
inline std::vector<SubjectScore> joint_task_scores(const std::vector<VideoScoreRow>& rows) {
  std::map<std::string, std::vector<const VideoScoreRow*>> by_subject;
  for (const VideoScoreRow& r : rows) by_subject[r.subject_id].push_back(&r);
  std::vector<SubjectScore> out;
  out.reserve(by_subject.size());
  for (const auto& [subject, videos] : by_subject) {
    if (videos.size() != 2) {
      throw ProtocolError("joint protocol requires exactly two task videos per subject; "
                          "subject '" + subject + "' has " + std::to_string(videos.size()));
    }
    const bool valid_pair =
        (videos[0]->task == Task::northwind && videos[1]->task == Task::freeform) ||
        (videos[0]->task == Task::freeform && videos[1]->task == Task::northwind);
    if (!valid_pair) {
      throw ProtocolError("subject '" + subject + "' lacks a northwind+freeform pair");
    }
    if (videos[0]->label != videos[1]->label) {
      throw ProtocolError("subject '" + subject + "' has inconsistent labels");
    }
    out.push_back({subject, (videos[0]->score + videos[1]->score) / 2.0, videos[0]->label});
  }
  return out;  // sorted by subject_id via the map
}

enum class Protocol { separated, joint, single };

inline const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::separated: return "separated";
    case Protocol::joint: return "joint";
    case Protocol::single: return "single";
  }
  return "?";
}
inline Protocol protocol_from_name(const std::string& s) {
  if (s == "separated") return Protocol::separated;
  if (s == "joint") return Protocol::joint;
  if (s == "single") return Protocol::single;
  throw ConfigError("unknown protocol: '" + s + "'");
}

struct EvalReport {
  Protocol protocol = Protocol::separated;
  int video_count = 0;
  int unit_count = 0;  // videos (separated/single) or subjects (joint)
  double independent_mae = 0.0, independent_rmse = 0.0;
  double dependent_mae = 0.0, dependent_rmse = 0.0;
  double fused_mae = 0.0, fused_rmse = 0.0;
  std::vector<double> sorted_abs_errors;  // fused predictions, one per unit
};

namespace detail {

inline std::string format_score(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

struct StreamPair {
  StreamPrediction independent;
  StreamPrediction dependent;
};

}  // namespace detail

// Metric aggregation shared by live evaluation and offline recomputation.
// `pairs` maps video_id -> both stream predictions; metadata comes from the
// manifest records of the evaluated partition.
inline EvalReport compute_report(const std::vector<const VideoRecord*>& records,
                                 const std::map<std::string, detail::StreamPair>& pairs,
                                 const FusionWeights& weights, Protocol protocol) {
  if (records.empty()) throw InvalidInputError("no videos to evaluate");
  std::vector<VideoScoreRow> ind_rows, dep_rows, fused_rows;
  for (const VideoRecord* rec : records) {
    auto it = pairs.find(rec->video_id);
    if (it == pairs.end()) {
      throw ConfigError("missing predictions for video '" + rec->video_id + "'");
    }
    const double label = rec->bdi_score;
    ind_rows.push_back({rec->video_id, rec->subject_id, rec->task,
                        it->second.independent.video_score, label});
    dep_rows.push_back({rec->video_id, rec->subject_id, rec->task,
                        it->second.dependent.video_score, label});
    fused_rows.push_back({rec->video_id, rec->subject_id, rec->task,
                          fuse_streams(it->second.independent, it->second.dependent, weights),
                          label});
  }
  auto sort_rows = [](std::vector<VideoScoreRow>& rows) {
    std::sort(rows.begin(), rows.end(), [](const VideoScoreRow& a, const VideoScoreRow& b) {
      return a.video_id < b.video_id;
    });
  };
  sort_rows(ind_rows);
  sort_rows(dep_rows);
  sort_rows(fused_rows);

  EvalReport report;
  report.protocol = protocol;
  report.video_count = static_cast<int>(records.size());

  auto metrics = [&](const std::vector<VideoScoreRow>& rows, double* out_mae,
                     double* out_rmse, std::vector<double>* errors) {
    std::vector<double> preds, labels;
    if (protocol == Protocol::joint) {
      for (const SubjectScore& s : joint_task_scores(rows)) {
        preds.push_back(s.score);
        labels.push_back(s.label);
      }
    } else {
      for (const VideoScoreRow& r : rows) {
        preds.push_back(r.score);
        labels.push_back(r.label);
      }
    }
    *out_mae = mae(preds, labels);
    *out_rmse = rmse(preds, labels);
    if (errors) *errors = error_distribution(preds, labels);
    return static_cast<int>(preds.size());
  };
  metrics(ind_rows, &report.independent_mae, &report.independent_rmse, nullptr);
  metrics(dep_rows, &report.dependent_mae, &report.dependent_rmse, nullptr);
  report.unit_count =
      metrics(fused_rows, &report.fused_mae, &report.fused_rmse, &report.sorted_abs_errors);
  return report;
}

// Scores every crop of one video in evaluation mode.
inline StreamPrediction predict_video(Model& model, const VideoRecord& record,
                                      AlignmentMode stream, int batch_size = 32) {
  if (record.frame_paths.empty()) {
    throw NoPredictionError("video '" + record.video_id + "' has no crops");
  }
  StreamPrediction pred;
  pred.video_id = record.video_id;
  pred.stream = stream;
  const int size = model.config().input_size;
  for (size_t start = 0; start < record.frame_paths.size();
       start += static_cast<size_t>(batch_size)) {
    const size_t count = std::min(record.frame_paths.size() - start,
                                  static_cast<size_t>(batch_size));
    Tensor batch({static_cast<std::int64_t>(count), 3, size, size});
    for (size_t i = 0; i < count; ++i) {
      const Image img = read_ppm(record.frame_paths[start + i]);
      if (img.height != size || img.width != size) {
        throw InvalidInputError("crop size mismatch for '" + record.video_id + "': got " +
                                std::to_string(img.width) + ", model expects " +
                                std::to_string(size));
      }
      const std::int64_t plane = static_cast<std::int64_t>(size) * size;
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < size; ++y) {
          for (int x = 0; x < size; ++x) {
            batch.data[(i * 3 + c) * plane + static_cast<std::int64_t>(y) * size + x] =
                img.at(y, x, c);
          }
        }
      }
    }
    const Tensor scores = model.forward(batch, /*train=*/false);
    for (size_t i = 0; i < count; ++i) pred.frame_scores.push_back(scores.data[i]);
  }
  for (const auto& path : record.frame_paths) {
    pred.frame_indices.push_back(std::stoi(path.stem().string()));
  }
  pred.video_score = video_score(pred.frame_scores);
  return pred;
}

// --- persistence -------------------------------------------------------------

inline void save_frame_scores(const std::vector<StreamPrediction>& preds,
                              const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write frame scores: " + path.string());
  out << "video_id,frame_index,score\n";
  for (const StreamPrediction& p : preds) {
    for (size_t i = 0; i < p.frame_scores.size(); ++i) {
      out << p.video_id << "," << p.frame_indices[i] << ","
          << detail::format_score(p.frame_scores[i]) << "\n";
    }
  }
}

inline std::vector<StreamPrediction> load_frame_scores(const std::filesystem::path& path,
                                                       AlignmentMode stream) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open frame scores: " + path.string());
  std::map<std::string, StreamPrediction> by_video;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    const auto fields = detail::split(t, ',');
    if (fields.size() != 3) throw IoError("bad frame score row: '" + t + "'");
    StreamPrediction& p = by_video[fields[0]];
    p.video_id = fields[0];
    p.stream = stream;
    p.frame_indices.push_back(std::stoi(fields[1]));
    p.frame_scores.push_back(std::stod(fields[2]));
  }
  std::vector<StreamPrediction> out;
  out.reserve(by_video.size());
  for (auto& [id, p] : by_video) {
    p.video_score = video_score(p.frame_scores);
    out.push_back(std::move(p));
  }
  return out;
}

// Rows from a video_id,task,stream,score file; labels are not stored there.
inline std::vector<VideoScoreRow> load_video_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open video scores: " + path.string());
  std::vector<VideoScoreRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    const auto fields = detail::split(t, ',');
    if (fields.size() != 4) throw IoError("bad video score row: '" + t + "'");
    VideoScoreRow row;
    row.video_id = fields[0];
    row.task = task_from_name(fields[1]);
    row.score = std::stod(fields[3]);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void save_video_scores(const std::vector<VideoScoreRow>& rows, const std::string& stream,
                              const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write video scores: " + path.string());
  out << "video_id,task,stream,score\n";
  for (const VideoScoreRow& r : rows) {
    out << r.video_id << "," << task_name(r.task) << "," << stream << ","
        << detail::format_score(r.score) << "\n";
  }
}

// report.txt: flat key = value lines; every metric is serialized at full
// precision so offline recomputation can be compared bit for bit.
inline void save_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path.string());
  out << "protocol = " << protocol_name(report.protocol) << "\n";
  out << "video_count = " << report.video_count << "\n";
  out << "unit_count = " << report.unit_count << "\n";
  out << "pose_independent.mae = " << detail::format_score(report.independent_mae) << "\n";
  out << "pose_independent.rmse = " << detail::format_score(report.independent_rmse) << "\n";
  out << "pose_dependent.mae = " << detail::format_score(report.dependent_mae) << "\n";
  out << "pose_dependent.rmse = " << detail::format_score(report.dependent_rmse) << "\n";
  out << "fused.mae = " << detail::format_score(report.fused_mae) << "\n";
  out << "fused.rmse = " << detail::format_score(report.fused_rmse) << "\n";
  out << "error_distribution = ";
  for (size_t i = 0; i < report.sorted_abs_errors.size(); ++i) {
    if (i) out << ",";
    out << detail::format_score(report.sorted_abs_errors[i]);
  }
  out << "\n";
}

inline EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  EvalReport r;
  r.protocol = protocol_from_name(kv.at("protocol"));
  r.video_count = std::stoi(kv.at("video_count"));
  r.unit_count = std::stoi(kv.at("unit_count"));
  r.independent_mae = std::stod(kv.at("pose_independent.mae"));
  r.independent_rmse = std::stod(kv.at("pose_independent.rmse"));
  r.dependent_mae = std::stod(kv.at("pose_dependent.mae"));
  r.dependent_rmse = std::stod(kv.at("pose_dependent.rmse"));
  r.fused_mae = std::stod(kv.at("fused.mae"));
  r.fused_rmse = std::stod(kv.at("fused.rmse"));
  if (!kv.at("error_distribution").empty()) {
    for (const std::string& field : detail::split(kv.at("error_distribution"), ',')) {
      r.sorted_abs_errors.push_back(std::stod(field));
    }
  }
  return r;
}

// Bar chart of the sorted per-unit absolute errors.
inline void save_error_distribution_svg(const std::vector<double>& sorted_errors,
                                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write svg: " + path.string());
  const int width = 640, height = 360, margin = 40;
  double max_err = 1.0;
  for (double e : sorted_errors) max_err = std::max(max_err, e);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\""
      << width - margin << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin
      << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  if (!sorted_errors.empty()) {
    const double band = static_cast<double>(width - 2 * margin) / sorted_errors.size();
    for (size_t i = 0; i < sorted_errors.size(); ++i) {
      const double h = (height - 2 * margin) * (sorted_errors[i] / max_err);
      out << "<rect x=\"" << margin + band * i << "\" y=\"" << height - margin - h
          << "\" width=\"" << std::max(1.0, band * 0.8) << "\" height=\"" << h
          << "\" fill=\"steelblue\"/>\n";
    }
  }
  out << "<text x=\"" << width / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-size=\"12\">videos ordered by absolute error"
      << "</text>\n";
  out << "</svg>\n";
}

struct EvaluateInputs {
  Manifest manifest;  // metadata only; crops are attached per stream
  std::filesystem::path crops_root;
  std::filesystem::path checkpoint_independent;
  std::filesystem::path checkpoint_dependent;
  FusionWeights weights;
  Protocol protocol = Protocol::separated;
  Partition partition = Partition::test;
  int batch_size = 32;
};

// Full evaluation: runs both stream checkpoints over the selected
// partition, persists per-frame and per-video scores plus the report, and
// returns the report. Deterministic and invariant to manifest ordering.
inline EvalReport evaluate(const EvaluateInputs& inputs,
                           const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(inputs.checkpoint_independent)) {
    throw ConfigError("missing pose_independent checkpoint: " +
                      inputs.checkpoint_independent.string());
  }
  if (!fs::exists(inputs.checkpoint_dependent)) {
    throw ConfigError("missing pose_dependent checkpoint: " +
                      inputs.checkpoint_dependent.string());
  }
  fs::create_directories(out_dir);

  Manifest partition_manifest;
  partition_manifest.corpus_name = inputs.manifest.corpus_name;
  partition_manifest.stride = inputs.manifest.stride;
  for (const VideoRecord& r : inputs.manifest.records) {
    if (r.partition == inputs.partition) partition_manifest.records.push_back(r);
  }
  if (partition_manifest.records.empty()) {
    throw ConfigError(std::string("no videos in partition ") +
                      partition_name(inputs.partition));
  }
  std::sort(partition_manifest.records.begin(), partition_manifest.records.end(),
            [](const VideoRecord& a, const VideoRecord& b) { return a.video_id < b.video_id; });

  std::map<std::string, detail::StreamPair> pairs;
  for (AlignmentMode mode :
       {AlignmentMode::pose_independent, AlignmentMode::pose_dependent}) {
    const fs::path ckpt_path = mode == AlignmentMode::pose_independent
                                   ? inputs.checkpoint_independent
                                   : inputs.checkpoint_dependent;
    Model model = restore_model(load_checkpoint(ckpt_path));
    Manifest stream_manifest = partition_manifest;
    attach_crop_paths(stream_manifest, inputs.crops_root, mode);

    std::vector<StreamPrediction> preds;
    std::vector<VideoScoreRow> rows;
    for (const VideoRecord& rec : stream_manifest.records) {
      StreamPrediction p = predict_video(model, rec, mode, inputs.batch_size);
      rows.push_back({rec.video_id, rec.subject_id, rec.task, p.video_score,
                      static_cast<double>(rec.bdi_score)});
      if (mode == AlignmentMode::pose_independent) {
        pairs[rec.video_id].independent = p;
      } else {
        pairs[rec.video_id].dependent = p;
      }
      preds.push_back(std::move(p));
    }
    const std::string mode_name = alignment_mode_name(mode);
    save_frame_scores(preds, out_dir / ("frame_scores_" + mode_name + ".csv"));
    save_video_scores(rows, mode_name, out_dir / ("video_scores_" + mode_name + ".csv"));
  }

  std::vector<const VideoRecord*> records;
  for (const VideoRecord& r : partition_manifest.records) records.push_back(&r);
  const EvalReport report = compute_report(records, pairs, inputs.weights, inputs.protocol);

  std::vector<VideoScoreRow> fused_rows;
  for (const VideoRecord* rec : records) {
    const auto& pair = pairs.at(rec->video_id);
    fused_rows.push_back({rec->video_id, rec->subject_id, rec->task,
                          fuse_streams(pair.independent, pair.dependent, inputs.weights),
                          static_cast<double>(rec->bdi_score)});
  }
  save_video_scores(fused_rows, "fused", out_dir / "video_scores_fused.csv");
  save_report(report, out_dir / "report.txt");

  std::ofstream errs(out_dir / "error_distribution.csv");
  errs << "rank,abs_error\n";
  for (size_t i = 0; i < report.sorted_abs_errors.size(); ++i) {
    errs << i << "," << detail::format_score(report.sorted_abs_errors[i]) << "\n";
  }
  save_error_distribution_svg(report.sorted_abs_errors, out_dir / "error_distribution.svg");
  return report;
}

// Offline recomputation from persisted frame scores; no model inference.
inline EvalReport recompute_report(const Manifest& manifest,
                                   const std::filesystem::path& frame_scores_independent,
                                   const std::filesystem::path& frame_scores_dependent,
                                   const FusionWeights& weights, Protocol protocol,
                                   Partition partition) {
  std::map<std::string, detail::StreamPair> pairs;
  for (StreamPrediction& p :
       load_frame_scores(frame_scores_independent, AlignmentMode::pose_independent)) {
    pairs[p.video_id].independent = std::move(p);
  }
  for (StreamPrediction& p :
       load_frame_scores(frame_scores_dependent, AlignmentMode::pose_dependent)) {
    pairs[p.video_id].dependent = std::move(p);
  }
  std::vector<const VideoRecord*> records;
  for (const VideoRecord& r : manifest.records) {
    if (r.partition == partition) records.push_back(&r);
  }
  std::sort(records.begin(), records.end(),
            [](const VideoRecord* a, const VideoRecord* b) { return a->video_id < b->video_id; });
  return compute_report(records, pairs, weights, protocol);
}

}  // namespace depscreen
