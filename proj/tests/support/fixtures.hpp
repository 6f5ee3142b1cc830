#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "depscreen/synthetic.hpp"

namespace fixtures {

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto base = std::filesystem::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      path_ = base / ("depscreen_" + tag + "_" + std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directory(path_, ec)) return;
    }
    throw std::runtime_error("cannot create temp dir for " + tag);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Desk-scale corpus: 8 videos x 12 frames, one identity per video, constant
// labels spanning all four BDI-II severity bands, partitions 4/2/2.
inline depscreen::synthetic::CorpusSpec overfit_corpus_spec(int frames_per_video = 12) {
  depscreen::synthetic::CorpusSpec spec;
  spec.frame_height = 96;
  spec.frame_width = 96;
  spec.face_size = 56.0;
  spec.max_tilt_degrees = 8.0;
  spec.seed = 20240915;
  const struct {
    const char* id;
    const char* subject;
    const char* partition;
    int score;
  } rows[] = {
      {"vid01", "s01", "training", 5},      // minimal
      {"vid02", "s02", "training", 16},     // mild
      {"vid03", "s03", "training", 24},     // moderate
      {"vid04", "s04", "training", 45},     // severe
      {"vid05", "s05", "development", 10},  //
      {"vid06", "s06", "development", 30},  //
      {"vid07", "s07", "test", 8},          //
      {"vid08", "s08", "test", 50},         //
  };
  for (const auto& row : rows) {
    spec.videos.push_back({row.id, row.subject, "single", row.partition, row.score,
                           frames_per_video});
  }
  return spec;
}

}  // namespace fixtures
