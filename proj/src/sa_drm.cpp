#include "petal/sa_drm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "petal/errors.hpp"

namespace petal {

void VideoMeta::validate() const {
  if (!(frame_width > 0) || !(frame_height > 0) || !(fps > 0)) {
    throw ValidationError("video meta: frame size and fps must be positive");
  }
  if (snippet_stride == 0 || num_snippets == 0 || feature_height == 0 || feature_width == 0 || feature_dim == 0) {
    throw ValidationError("video meta: snippet and feature dimensions must be positive");
  }
}

std::size_t TokenSet::num_valid() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
}

std::vector<SubjectBox> clip_boxes(const std::vector<SubjectBox>& boxes, const VideoMeta& meta) {
  std::vector<SubjectBox> out;
  out.reserve(boxes.size());
  for (const auto& b : boxes) {
    SubjectBox c = b;
    c.x1 = std::clamp(b.x1, 0.0, meta.frame_width);
    c.x2 = std::clamp(b.x2, 0.0, meta.frame_width);
    c.y1 = std::clamp(b.y1, 0.0, meta.frame_height);
    c.y2 = std::clamp(b.y2, 0.0, meta.frame_height);
    if (c.x2 > c.x1 && c.y2 > c.y1) out.push_back(c);
  }
  return out;
}

std::vector<std::size_t> rank_subject_indices(const std::vector<SubjectBox>& boxes, const VideoMeta& meta,
                                              std::size_t K) {
  if (K == 0) throw std::invalid_argument("rank_subjects: K must be >= 1");
  const double frame_area = meta.frame_width * meta.frame_height;
  struct Entry {
    std::size_t index;
    double ratio;
    double confidence;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto clipped = clip_boxes({boxes[i]}, meta);
    if (clipped.empty()) continue;
    entries.push_back({i, clipped.front().area() / frame_area, boxes[i].confidence});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.ratio != b.ratio) return a.ratio > b.ratio;
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.index < b.index;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(K, entries.size()); ++i) out.push_back(entries[i].index);
  return out;
}

std::vector<SubjectBox> rank_subjects(const std::vector<SubjectBox>& boxes, const VideoMeta& meta, std::size_t K) {
  std::vector<SubjectBox> out;
  for (std::size_t i : rank_subject_indices(boxes, meta, K)) out.push_back(clip_boxes({boxes[i]}, meta).front());
  return out;
}

namespace {

// Bilinear taps at continuous center-index coordinate (y, x), following the
// out-of-range rules of the reference RoIAlign kernel.
void add_bilinear(ops::RowTaps& taps, double y, double x, std::size_t H, std::size_t W, double weight) {
  const double Hd = static_cast<double>(H), Wd = static_cast<double>(W);
  if (y < -1.0 || y > Hd || x < -1.0 || x > Wd) return;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  auto y_lo = static_cast<std::size_t>(y);
  auto x_lo = static_cast<std::size_t>(x);
  std::size_t y_hi, x_hi;
  if (y_lo >= H - 1) {
    y_lo = y_hi = H - 1;
    y = static_cast<double>(y_lo);
  } else {
    y_hi = y_lo + 1;
  }
  if (x_lo >= W - 1) {
    x_lo = x_hi = W - 1;
    x = static_cast<double>(x_lo);
  } else {
    x_hi = x_lo + 1;
  }
  const double ly = y - static_cast<double>(y_lo), lx = x - static_cast<double>(x_lo);
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  auto push = [&](std::size_t r, std::size_t c, double w) {
    if (w != 0.0) taps.emplace_back(r * W + c, weight * w);
  };
  push(y_lo, x_lo, hy * hx);
  push(y_lo, x_hi, hy * lx);
  push(y_hi, x_lo, ly * hx);
  push(y_hi, x_hi, ly * lx);
}

}  // namespace

std::vector<ops::RowTaps> roi_align_taps(const SubjectBox& box, const VideoMeta& meta, RoiBins bins) {
  if (bins.h == 0 || bins.w == 0) throw std::invalid_argument("roi_align: bins must be >= 1");
  const std::size_t H = meta.feature_height, W = meta.feature_width;
  const double sy = static_cast<double>(H) / meta.frame_height;
  const double sx = static_cast<double>(W) / meta.frame_width;
  const double y0 = box.y1 * sy, x0 = box.x1 * sx;
  // Degenerate boxes are widened to one cell.
  const double roi_h = std::max(box.y2 * sy - y0, 1.0);
  const double roi_w = std::max(box.x2 * sx - x0, 1.0);
  const double bin_h = roi_h / static_cast<double>(bins.h);
  const double bin_w = roi_w / static_cast<double>(bins.w);
  constexpr int kSamples = 2;
  const double w = 1.0 / (kSamples * kSamples);
  std::vector<ops::RowTaps> out(bins.h * bins.w);
  for (std::size_t ph = 0; ph < bins.h; ++ph)
    for (std::size_t pw = 0; pw < bins.w; ++pw) {
      auto& taps = out[ph * bins.w + pw];
      for (int iy = 0; iy < kSamples; ++iy)
        for (int ix = 0; ix < kSamples; ++ix) {
          const double y = y0 + (static_cast<double>(ph) + (iy + 0.5) / kSamples) * bin_h - 0.5;
          const double x = x0 + (static_cast<double>(pw) + (ix + 0.5) / kSamples) * bin_w - 0.5;
          add_bilinear(taps, y, x, H, W, w);
        }
    }
  return out;
}

Var roi_align(Graph& g, Var feature, const SubjectBox& box, const VideoMeta& meta, RoiBins bins) {
  const auto& f = g.value(feature);
  if (f.rows() != meta.feature_height * meta.feature_width) {
    throw DimensionError("roi_align: feature has " + std::to_string(f.rows()) + " cells, meta expects " +
                         std::to_string(meta.feature_height * meta.feature_width));
  }
  return ops::combine_rows(g, feature, roi_align_taps(box, meta, bins));
}

namespace {
Tensor as_cells(const Tensor& feature) {
  if (feature.rank() != 3) throw DimensionError("snippet feature must be [H x W x D], got " + shape_str(feature.shape()));
  return feature.reshaped({feature.dim(0) * feature.dim(1), feature.dim(2)});
}
}  // namespace

Tensor roi_align(const Tensor& feature, const SubjectBox& box, const VideoMeta& meta, RoiBins bins) {
  Graph g;
  const Var out = roi_align(g, g.constant(as_cells(feature)), box, meta, bins);
  return g.value(out).reshaped({bins.h, bins.w, feature.dim(2)});
}

TokenVars extract_tokens(Graph& g, Var feature, const std::vector<SubjectBox>& boxes, const VideoMeta& meta,
                         std::size_t K, RoiBins bins) {
  const std::size_t D = g.value(feature).cols();
  const auto ranked = rank_subjects(boxes, meta, K);
  TokenVars out;
  for (const auto& b : ranked) {
    out.individual.push_back(ops::mean_rows(g, roi_align(g, feature, b, meta, bins)));
    out.valid.push_back(true);
  }
  while (out.individual.size() < K) {
    out.individual.push_back(g.constant(Tensor::zeros({D})));
    out.valid.push_back(false);
  }
  return out;
}

TokenSet extract_tokens(const Tensor& feature, const std::vector<SubjectBox>& boxes, const VideoMeta& meta, std::size_t K,
                        RoiBins bins) {
  Graph g;
  const auto vars = extract_tokens(g, g.constant(as_cells(feature)), boxes, meta, K, bins);
  TokenSet out;
  for (Var v : vars.individual) out.individual.push_back(g.value(v));
  out.valid = vars.valid;
  return out;
}

Tensor global_average(const Tensor& feature) {
  const Tensor cells = as_cells(feature);
  std::vector<double> avg(cells.cols(), 0.0);
  for (std::size_t r = 0; r < cells.rows(); ++r)
    for (std::size_t j = 0; j < cells.cols(); ++j) avg[j] += cells.at(r, j);
  for (auto& v : avg) v /= static_cast<double>(cells.rows());
  return Tensor::vector(std::move(avg));
}

}  // namespace petal
