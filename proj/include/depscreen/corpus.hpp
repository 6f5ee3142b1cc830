#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "depscreen/common.hpp"
#include "depscreen/detect.hpp"
#include "depscreen/facegeom.hpp"
#include "depscreen/image.hpp"

namespace depscreen {

enum class Task { northwind, freeform, single };
enum class Partition { training, development, test };
enum class SeverityBand { minimal, mild, moderate, severe };
enum class CorpusLayout { avec2013, avec2014, generic };

inline const char* task_name(Task t) {
  switch (t) {
    case Task::northwind: return "northwind";
    case Task::freeform: return "freeform";
    case Task::single: return "single";
  }
  return "?";
}

inline Task task_from_name(const std::string& s) {
  if (s == "northwind") return Task::northwind;
  if (s == "freeform") return Task::freeform;
  if (s == "single") return Task::single;
  throw ManifestError("unknown task: '" + s + "'");
}

inline const char* partition_name(Partition p) {
  switch (p) {
    case Partition::training: return "training";
    case Partition::development: return "development";
    case Partition::test: return "test";
  }
  return "?";
}

inline Partition partition_from_name(const std::string& s) {
  if (s == "training") return Partition::training;
  if (s == "development") return Partition::development;
  if (s == "test") return Partition::test;
  throw ManifestError("unknown partition: '" + s + "'");
}

inline CorpusLayout layout_from_name(const std::string& s) {
  if (s == "avec2013") return CorpusLayout::avec2013;
  if (s == "avec2014") return CorpusLayout::avec2014;
  if (s == "generic") return CorpusLayout::generic;
  throw ConfigError("unknown corpus layout: '" + s + "'");
}

// BDI-II severity bands: minimal 0-13, mild 14-19, moderate 20-28,
// severe 29-63 (inclusive boundaries).
inline SeverityBand severity_band(int score) {
  if (score < 0 || score > 63) {
    throw LabelError("BDI-II score out of range [0,63]: " + std::to_string(score));
  }
  if (score <= 13) return SeverityBand::minimal;
  if (score <= 19) return SeverityBand::mild;
  if (score <= 28) return SeverityBand::moderate;
  return SeverityBand::severe;
}

inline const char* severity_band_name(SeverityBand b) {
  switch (b) {
    case SeverityBand::minimal: return "minimal";
    case SeverityBand::mild: return "mild";
    case SeverityBand::moderate: return "moderate";
    case SeverityBand::severe: return "severe";
  }
  return "?";
}

// Frame sampling indices 0, stride, 2*stride, ... < frame_count.
inline std::vector<int> sample_frames(int frame_count, int stride) {
  if (frame_count < 1) throw InvalidInputError("frame_count must be >= 1");
  if (stride < 1) throw InvalidInputError("stride must be >= 1");
  std::vector<int> indices;
  indices.reserve((frame_count + stride - 1) / stride);
  for (int i = 0; i < frame_count; i += stride) indices.push_back(i);
  return indices;
}

struct VideoRecord {
  std::string video_id;
  std::string subject_id;
  Task task = Task::single;
  Partition partition = Partition::training;
  int bdi_score = 0;
  std::vector<std::filesystem::path> frame_paths;  // source frames, sorted
  int frame_count = 0;
};

struct Manifest {
  std::string corpus_name;
  int stride = 1;
  std::vector<VideoRecord> records;

  std::vector<const VideoRecord*> in_partition(Partition p) const {
    std::vector<const VideoRecord*> out;
    for (const VideoRecord& r : records) {
      if (r.partition == p) out.push_back(&r);
    }
    return out;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(trim(field));
  return out;
}

struct LabelRow {
  std::string subject_id;
  Task task;
  Partition partition;
  int bdi_score;
};

inline std::map<std::string, LabelRow> parse_labels(const std::filesystem::path& labels_file) {
  std::ifstream in(labels_file);
  if (!in) throw ManifestError("cannot open labels file: " + labels_file.string());
  std::map<std::string, LabelRow> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto fields = split(t, ',');
    if (fields.size() != 5) {
      throw ManifestError("labels line " + std::to_string(line_no) +
                          ": expected video_id,subject_id,task,partition,bdi_score");
    }
    int score = 0;
    try {
      size_t used = 0;
      score = std::stoi(fields[4], &used);
      if (used != fields[4].size()) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      throw LabelError("labels line " + std::to_string(line_no) + ": bad score '" +
                       fields[4] + "'");
    }
    if (score < 0 || score > 63) {
      throw LabelError("labels line " + std::to_string(line_no) + ": score " +
                       std::to_string(score) + " outside [0,63] for video '" + fields[0] + "'");
    }
    if (rows.count(fields[0])) {
      throw ManifestError("duplicate video_id in labels: '" + fields[0] + "'");
    }
    rows[fields[0]] = {fields[1], task_from_name(fields[2]),
                       partition_from_name(fields[3]), score};
  }
  return rows;
}

inline bool is_frame_file(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".ppm" || ext == ".PPM";
}

inline std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> frames;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_frame_file(entry.path())) {
      frames.push_back(entry.path());
    }
  }
  std::sort(frames.begin(), frames.end());
  return frames;
}

inline void validate_manifest_structure(const Manifest& manifest, CorpusLayout layout) {
  std::set<std::string> ids;
  bool has_partition[3] = {false, false, false};
  std::map<std::string, std::set<Task>> subject_tasks;
  for (const VideoRecord& r : manifest.records) {
    if (!ids.insert(r.video_id).second) {
      throw ManifestError("duplicate video_id: '" + r.video_id + "'");
    }
    has_partition[static_cast<int>(r.partition)] = true;
    subject_tasks[r.subject_id].insert(r.task);
    if (layout == CorpusLayout::avec2013 && r.task != Task::single) {
      throw ManifestError("avec2013 layout requires task=single, video '" + r.video_id +
                          "' has " + task_name(r.task));
    }
    if (layout == CorpusLayout::avec2014 && r.task == Task::single) {
      throw ManifestError("avec2014 layout forbids task=single, video '" + r.video_id + "'");
    }
  }
  for (int p = 0; p < 3; ++p) {
    if (!has_partition[p]) {
      throw ManifestError(std::string("empty partition: ") +
                          partition_name(static_cast<Partition>(p)));
    }
  }
  if (layout == CorpusLayout::avec2014) {
    for (const auto& [subject, tasks] : subject_tasks) {
      if (tasks != std::set<Task>{Task::northwind, Task::freeform}) {
        throw ManifestError("avec2014 layout requires exactly northwind+freeform per subject; "
                            "subject '" + subject + "' violates this");
      }
    }
  }
}

}  // namespace detail

// Builds a manifest from a corpus directory (one subdirectory of frame
// images per video) and a labels CSV with columns
// video_id,subject_id,task,partition,bdi_score. Every labeled video must
// have a frame directory and vice versa.
inline Manifest build_manifest(const std::filesystem::path& corpus_root, CorpusLayout layout,
                               const std::filesystem::path& labels_file, int stride,
                               const std::string& corpus_name = "") {
  if (stride < 1) throw ManifestError("stride must be >= 1");
  if (!std::filesystem::is_directory(corpus_root)) {
    throw ManifestError("corpus root is not a directory: " + corpus_root.string());
  }
  auto labels = detail::parse_labels(labels_file);

  std::vector<std::filesystem::path> video_dirs;
  for (const auto& entry : std::filesystem::directory_iterator(corpus_root)) {
    if (entry.is_directory()) video_dirs.push_back(entry.path());
  }
  std::sort(video_dirs.begin(), video_dirs.end());

  Manifest manifest;
  manifest.corpus_name = corpus_name.empty() ? corpus_root.filename().string() : corpus_name;
  manifest.stride = stride;

  std::vector<std::string> missing_labels;
  std::set<std::string> seen_ids;
  for (const auto& dir : video_dirs) {
    const std::string id = dir.filename().string();
    auto it = labels.find(id);
    if (it == labels.end()) {
      missing_labels.push_back(id);
      continue;
    }
    VideoRecord rec;
    rec.video_id = id;
    rec.subject_id = it->second.subject_id;
    rec.task = it->second.task;
    rec.partition = it->second.partition;
    rec.bdi_score = it->second.bdi_score;
    rec.frame_paths = detail::list_frames(dir);
    rec.frame_count = static_cast<int>(rec.frame_paths.size());
    if (rec.frame_paths.empty()) {
      throw ManifestError("video '" + id + "' has no frame files under " + dir.string());
    }
    seen_ids.insert(id);
    manifest.records.push_back(std::move(rec));
  }
  if (!missing_labels.empty()) {
    std::string msg = "videos without labels:";
    for (const auto& id : missing_labels) msg += " '" + id + "'";
    throw ManifestError(msg);
  }
  std::vector<std::string> missing_dirs;
  for (const auto& [id, row] : labels) {
    if (!seen_ids.count(id)) missing_dirs.push_back(id);
  }
  if (!missing_dirs.empty()) {
    std::string msg = "labeled videos without frame directories:";
    for (const auto& id : missing_dirs) msg += " '" + id + "'";
    throw ManifestError(msg);
  }

  detail::validate_manifest_structure(manifest, layout);
  return manifest;
}

// Manifest file: '#' metadata lines, then a TSV header and one row per
// video: video_id subject_id task partition bdi_score frame_count.
inline void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << "#corpus_name=" << manifest.corpus_name << "\n";
  out << "#stride=" << manifest.stride << "\n";
  out << "video_id\tsubject_id\ttask\tpartition\tbdi_score\tframe_count\n";
  for (const VideoRecord& r : manifest.records) {
    out << r.video_id << "\t" << r.subject_id << "\t" << task_name(r.task) << "\t"
        << partition_name(r.partition) << "\t" << r.bdi_score << "\t" << r.frame_count << "\n";
  }
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest: " + path.string());
  Manifest manifest;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const auto eq = t.find('=');
      if (eq != std::string::npos) {
        const std::string key = t.substr(1, eq - 1);
        const std::string value = t.substr(eq + 1);
        if (key == "corpus_name") manifest.corpus_name = value;
        if (key == "stride") manifest.stride = std::stoi(value);
      }
      continue;
    }
    if (!header_seen) {
      header_seen = true;  // column header row
      continue;
    }
    const auto fields = detail::split(t, '\t');
    if (fields.size() != 6) throw ManifestError("bad manifest row: '" + t + "'");
    VideoRecord rec;
    rec.video_id = fields[0];
    rec.subject_id = fields[1];
    rec.task = task_from_name(fields[2]);
    rec.partition = partition_from_name(fields[3]);
    rec.bdi_score = std::stoi(fields[4]);
    if (rec.bdi_score < 0 || rec.bdi_score > 63) {
      throw LabelError("manifest score outside [0,63] for video '" + rec.video_id + "'");
    }
    rec.frame_count = std::stoi(fields[5]);
    manifest.records.push_back(std::move(rec));
  }
  if (manifest.records.empty()) throw ManifestError("manifest has no records: " + path.string());
  std::set<std::string> ids;
  for (const VideoRecord& r : manifest.records) {
    if (!ids.insert(r.video_id).second) {
      throw ManifestError("duplicate video_id in manifest: '" + r.video_id + "'");
    }
  }
  return manifest;
}

// Points records at preprocessed crops: crops_root/<mode>/<video_id>/*.ppm.
inline void attach_crop_paths(Manifest& manifest, const std::filesystem::path& crops_root,
                              AlignmentMode mode) {
  const std::filesystem::path base = crops_root / alignment_mode_name(mode);
  for (VideoRecord& r : manifest.records) {
    const std::filesystem::path dir = base / r.video_id;
    if (!std::filesystem::is_directory(dir)) {
      throw ConfigError("missing crops for video '" + r.video_id + "' under " + dir.string());
    }
    r.frame_paths = detail::list_frames(dir);
    r.frame_count = static_cast<int>(r.frame_paths.size());
    if (r.frame_paths.empty()) {
      throw ConfigError("no crops for video '" + r.video_id + "' under " + dir.string());
    }
  }
}

struct VideoPreprocessCounts {
  std::string video_id;
  int sampled = 0;
  int processed = 0;
  int no_face_skipped = 0;
  int padding_flagged = 0;
  int redetect_fallbacks = 0;
  bool failed = false;  // zero usable frames
};

struct PreprocessReport {
  AlignmentMode mode = AlignmentMode::pose_independent;
  std::vector<VideoPreprocessCounts> videos;  // sorted by video_id

  bool any_failed() const {
    return std::any_of(videos.begin(), videos.end(),
                       [](const VideoPreprocessCounts& v) { return v.failed; });
  }
};

// Column order is fixed:
// video_id sampled processed no_face_skipped padding_flagged redetect_fallbacks status
inline void save_preprocess_report(const PreprocessReport& report,
                                   const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path.string());
  out << "#mode=" << alignment_mode_name(report.mode) << "\n";
  out << "video_id\tsampled\tprocessed\tno_face_skipped\tpadding_flagged"
         "\tredetect_fallbacks\tstatus\n";
  for (const auto& v : report.videos) {
    out << v.video_id << "\t" << v.sampled << "\t" << v.processed << "\t" << v.no_face_skipped
        << "\t" << v.padding_flagged << "\t" << v.redetect_fallbacks << "\t"
        << (v.failed ? "failed" : "ok") << "\n";
  }
}

// Detects, aligns and writes one crop per sampled frame to
// out_root/<mode>/<video_id>/<frame index, 6 digits>.ppm. Frames with no
// detection are skipped and counted; videos with zero usable frames are
// reported as failures. Deterministic: rerunning produces byte-identical
// crops. Videos fan out over `workers` threads; the report order does not
// depend on scheduling.
inline PreprocessReport extract_and_align(const Manifest& manifest,
                                          const DetectorConfig& detector_config,
                                          AlignmentMode mode, int target,
                                          const std::filesystem::path& out_root,
                                          int workers = 1) {
  namespace fs = std::filesystem;
  if (target < 8) throw ParameterError("crop target must be >= 8");
  for (const VideoRecord& rec : manifest.records) {
    if (rec.frame_paths.empty() ||
        static_cast<int>(rec.frame_paths.size()) != rec.frame_count) {
      throw ManifestError("record '" + rec.video_id +
                          "' carries no frame paths; build the manifest from the corpus");
    }
  }
  const fs::path mode_root = out_root / alignment_mode_name(mode);
  fs::create_directories(mode_root);

  PreprocessReport report;
  report.mode = mode;
  report.videos.resize(manifest.records.size());

  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::string failure_message;
  std::mutex failure_mutex;

  auto worker_fn = [&]() {
    const auto detector = make_detector(detector_config);  // one instance per worker
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= manifest.records.size() || failed.load()) break;
      const VideoRecord& rec = manifest.records[i];
      VideoPreprocessCounts counts;
      counts.video_id = rec.video_id;
      try {
        const fs::path video_dir = mode_root / rec.video_id;
        fs::create_directories(video_dir);
        const auto indices = sample_frames(rec.frame_count, manifest.stride);
        counts.sampled = static_cast<int>(indices.size());
        for (int frame_index : indices) {
          const Image frame = read_ppm(rec.frame_paths[frame_index]);
          const auto detections = detector->detect(frame);
          if (detections.empty()) {
            ++counts.no_face_skipped;
            continue;
          }
          const Detection face = primary_face(detections);
          AlignedFace aligned;
          if (mode == AlignmentMode::pose_independent) {
            aligned = align_pose_independent(frame, face, target, frame_index);
          } else {
            aligned = align_pose_dependent(
                frame, face, [&](const Image& img) { return detector->detect(img); }, target,
                frame_index);
            if (aligned.redetect_fallback) ++counts.redetect_fallbacks;
          }
          if (aligned.touched_padding) ++counts.padding_flagged;
          char name[16];
          std::snprintf(name, sizeof(name), "%06d.ppm", frame_index);
          write_ppm(aligned.pixels, video_dir / name);
          ++counts.processed;
        }
        counts.failed = counts.processed == 0;
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        failed.store(true);
        if (failure_message.empty()) {
          failure_message = "video '" + rec.video_id + "': " + e.what();
        }
      }
      report.videos[i] = std::move(counts);
    }
  };

  const int thread_count = std::max(1, workers);
  if (thread_count == 1) {
    worker_fn();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(thread_count);
    for (int t = 0; t < thread_count; ++t) pool.emplace_back(worker_fn);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) throw IoError("preprocessing failed: " + failure_message);

  std::sort(report.videos.begin(), report.videos.end(),
            [](const VideoPreprocessCounts& a, const VideoPreprocessCounts& b) {
              return a.video_id < b.video_id;
            });
  return report;
}

}  // namespace depscreen
