#include "petal/eval.hpp"

#include <algorithm>
#include <set>

namespace petal {

namespace {

struct PooledDet {
  std::size_t video;
  double score, start, end;
};

struct PooledGt {
  std::size_t video;
  double start, end;
};

double pooled_ap(std::vector<PooledDet> dets, const std::vector<PooledGt>& gts, double thr) {
  if (gts.empty()) return 0.0;
  std::stable_sort(dets.begin(), dets.end(), [](const PooledDet& a, const PooledDet& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.start < b.start;
  });
  std::vector<bool> matched(gts.size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto& d = dets[i];
    std::size_t best = gts.size();
    double best_iou = -1.0;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (matched[j] || gts[j].video != d.video) continue;
      const double o = tiou(d.start, d.end, gts[j].start, gts[j].end);
      if (o >= thr && o > best_iou) {
        best = j;
        best_iou = o;
      }
    }
    if (best != gts.size()) {
      matched[best] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
  }
  // Running max from the right gives the interpolated precision envelope.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double total = 0.0;
  std::size_t k = 0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    while (k < recall.size() && recall[k] < level) ++k;
    if (k < recall.size()) total += precision[k];
  }
  return total / 101.0;
}

}  // namespace

double average_precision(const std::vector<ActionSegment>& dets, const std::vector<GroundTruthSegment>& gts,
                         double threshold) {
  std::vector<PooledDet> pd;
  for (const auto& d : dets) pd.push_back({0, d.score, d.start, d.end});
  std::vector<PooledGt> pg;
  for (const auto& g : gts) pg.push_back({0, g.start, g.end});
  return pooled_ap(std::move(pd), pg, threshold);
}

EvalReport evaluate(const VideoDetections& dets, const VideoGroundTruth& gts, const std::vector<double>& thresholds) {
  std::map<std::string, std::size_t> video_index;
  for (const auto& [id, _] : gts) video_index.emplace(id, video_index.size());
  for (const auto& [id, _] : dets) video_index.emplace(id, video_index.size());

  std::set<int> classes;
  for (const auto& [_, segs] : gts)
    for (const auto& s : segs) classes.insert(s.class_id);

  EvalReport rep;
  for (double thr : thresholds) {
    double sum = 0.0;
    for (int c : classes) {
      std::vector<PooledDet> pd;
      for (const auto& [id, segs] : dets)
        for (const auto& d : segs)
          if (d.class_id == c) pd.push_back({video_index[id], d.score, d.start, d.end});
      std::vector<PooledGt> pg;
      for (const auto& [id, segs] : gts)
        for (const auto& s : segs)
          if (s.class_id == c) pg.push_back({video_index[id], s.start, s.end});
      const double ap = pooled_ap(std::move(pd), pg, thr);
      rep.per_class_ap[{c, thr}] = ap;
      sum += ap;
    }
    rep.per_threshold_map[thr] = classes.empty() ? 0.0 : sum / static_cast<double>(classes.size());
  }
  double total = 0.0;
  for (const auto& [_, m] : rep.per_threshold_map) total += m;
  rep.average_map = rep.per_threshold_map.empty() ? 0.0 : total / static_cast<double>(rep.per_threshold_map.size());
  return rep;
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

std::vector<double> coarse_thresholds() { return {0.3, 0.4, 0.5, 0.6, 0.7}; }

}  // namespace petal
