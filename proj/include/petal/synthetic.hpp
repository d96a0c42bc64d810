#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "petal/dataio.hpp"

// Seeded toy datasets where subject regions carry the action class and the
// global frame average does not.
namespace petal::synth {

struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t num_videos = 8;
  int num_classes = 2;
  std::size_t t_min = 28, t_max = 36;
  std::size_t k_min = 1, k_max = 3;  // planted subjects per video, at most 4
  double noise = 0.0;                // sigma_n on every cell
  // Background cells compensate the subjects so every snippet has the same
  // global average.
  bool confounded = true;
  std::size_t max_segments = 2;
  std::size_t min_segment_len = 3;  // snippets
  double coverage_min = 0.3, coverage_max = 0.6;
  std::size_t grid = 8;  // H = W, even
  std::size_t feature_dim = 16;
  double frame_size = 128;
  double fps = 16;
  std::size_t snippet_stride = 4;

  void validate() const;
};

struct Video {
  io::AnnotationRecord annotation;
  io::FeatureFile features;
  std::vector<std::size_t> subject_cells;  // h * W + w of planted subject cells
};

struct Dataset {
  std::vector<Video> videos;
  std::vector<std::vector<float>> class_signals;  // C vectors of size D
  std::vector<float> idle_signal;
  std::vector<float> global_mean;
};

Dataset generate(const SyntheticSpec& spec);

// <dir>/annotations.jsonl and <dir>/features/<id>.ptfv.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);

}  // namespace petal::synth
