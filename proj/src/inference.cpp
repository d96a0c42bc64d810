#include "petal/inference.hpp"

#include <algorithm>
#include <cmath>

namespace petal {

std::vector<LevelPrediction> predictions(const Graph& g, const HeadOutput& outs) {
  std::vector<LevelPrediction> out;
  for (const auto& l : outs.levels) out.push_back({g.value(l.logits), g.value(l.offsets), l.stride, l.valid_len});
  return out;
}

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Strict weak order: higher score first, then earlier start, then class id.
bool ranks_before(const ActionSegment& a, const ActionSegment& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.start != b.start) return a.start < b.start;
  return a.class_id < b.class_id;
}

}  // namespace

std::vector<ActionSegment> decode(const std::vector<LevelPrediction>& levels, const VideoMeta& meta,
                                  const DecodeConfig& cfg) {
  const double duration = meta.duration();
  std::vector<ActionSegment> out;
  for (const auto& lvl : levels) {
    const double unit = static_cast<double>(lvl.stride) * meta.snippet_seconds();
    const std::size_t C = lvl.logits.cols();
    const std::size_t n = std::min(lvl.valid_len, lvl.logits.rows());
    for (std::size_t t = 0; t < n; ++t) {
      const double ds = lvl.offsets.at(t, 0), de = lvl.offsets.at(t, 1);
      const double start = std::clamp((static_cast<double>(t) - ds) * unit, 0.0, duration);
      const double end = std::clamp((static_cast<double>(t) + de) * unit, 0.0, duration);
      if (!(end > start)) continue;
      for (std::size_t c = 0; c < C; ++c) {
        const double p = sigmoid(lvl.logits.at(t, c));
        if (p > cfg.score_threshold) out.push_back({static_cast<int>(c), p, start, end});
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), ranks_before);
  if (out.size() > cfg.pre_nms_topk) out.resize(cfg.pre_nms_topk);
  return out;
}

std::vector<ActionSegment> soft_nms(std::vector<ActionSegment> segs, double sigma, double min_score, bool per_class) {
  if (!(sigma > 0)) throw std::invalid_argument("soft_nms: sigma must be positive");
  std::erase_if(segs, [&](const ActionSegment& s) { return s.score < min_score; });
  std::vector<ActionSegment> kept;
  while (!segs.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < segs.size(); ++i)
      if (ranks_before(segs[i], segs[best])) best = i;
    const ActionSegment sel = segs[best];
    segs.erase(segs.begin() + static_cast<std::ptrdiff_t>(best));
    kept.push_back(sel);
    for (auto& s : segs) {
      if (per_class && s.class_id != sel.class_id) continue;
      const double o = tiou(s, sel);
      s.score *= std::exp(-(o * o) / sigma);
    }
    std::erase_if(segs, [&](const ActionSegment& s) { return s.score < min_score; });
  }
  return kept;
}

std::vector<ActionSegment> postprocess(const std::vector<LevelPrediction>& levels, const VideoMeta& meta,
                                       const DecodeConfig& dcfg, const SoftNmsConfig& ncfg) {
  auto out = soft_nms(decode(levels, meta, dcfg), ncfg.sigma, ncfg.min_score, ncfg.per_class);
  if (out.size() > ncfg.max_keep) out.resize(ncfg.max_keep);
  return out;
}

}  // namespace petal
