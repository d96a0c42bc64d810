#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "petal/heads.hpp"
#include "petal/segment.hpp"

namespace petal {

struct EvalReport {
  std::map<double, double> per_threshold_map;
  double average_map = 0.0;
  std::map<std::pair<int, double>, double> per_class_ap;
};

// Detections and ground truth of every video, keyed by video id.
using VideoDetections = std::map<std::string, std::vector<ActionSegment>>;
using VideoGroundTruth = std::map<std::string, std::vector<GroundTruthSegment>>;

// 101-point interpolated AP of one class in a single video. Class ids are
// ignored; callers pass same-class lists.
double average_precision(const std::vector<ActionSegment>& dets, const std::vector<GroundTruthSegment>& gts,
                         double threshold);

// Per-class AP pooled over videos; mAP averages classes present in the
// ground truth. Detections of videos without ground truth count as false
// positives.
EvalReport evaluate(const VideoDetections& dets, const VideoGroundTruth& gts, const std::vector<double>& thresholds);

// 0.5:0.05:0.95 and 0.3:0.1:0.7.
std::vector<double> default_thresholds();
std::vector<double> coarse_thresholds();

}  // namespace petal
