#pragma once

#include <vector>

#include "petal/heads.hpp"
#include "petal/sa_drm.hpp"
#include "petal/segment.hpp"

namespace petal {

// Head outputs of one level as plain values.
struct LevelPrediction {
  Tensor logits;   // [T_l x C]
  Tensor offsets;  // [T_l x 2]
  std::size_t stride = 1;
  std::size_t valid_len = 0;
};

std::vector<LevelPrediction> predictions(const Graph& g, const HeadOutput& outs);

struct DecodeConfig {
  double score_threshold = 0.001;
  std::size_t pre_nms_topk = 2000;
};

struct SoftNmsConfig {
  double sigma = 0.5;
  double min_score = 0.001;
  bool per_class = true;
  std::size_t max_keep = 200;
};

// Candidates (class, sigmoid(logit), (t - d_s) * u, (t + d_e) * u) with
// u = stride * snippet_stride / fps, clamped to the video and ordered by
// score (ties: earlier start, then class id).
std::vector<ActionSegment> decode(const std::vector<LevelPrediction>& levels, const VideoMeta& meta,
                                  const DecodeConfig& cfg = {});

// Gaussian Soft-NMS. Output is in selection order; boundaries never change.
std::vector<ActionSegment> soft_nms(std::vector<ActionSegment> segs, double sigma, double min_score, bool per_class);

// decode -> soft_nms -> keep the top max_keep.
std::vector<ActionSegment> postprocess(const std::vector<LevelPrediction>& levels, const VideoMeta& meta,
                                       const DecodeConfig& dcfg = {}, const SoftNmsConfig& ncfg = {});

}  // namespace petal
