#pragma once

#include <cstddef>
#include <vector>

#include "petal/autograd.hpp"
#include "petal/ops.hpp"

// Subject ranking and RoIAlign pooling of individual tokens.
namespace petal {

struct VideoMeta {
  double frame_width = 0;   // pixels
  double frame_height = 0;  // pixels
  double fps = 0;
  std::size_t snippet_stride = 1;  // frames between consecutive snippets
  std::size_t num_snippets = 0;
  std::size_t feature_height = 0;
  std::size_t feature_width = 0;
  std::size_t feature_dim = 0;

  // Seconds per snippet step.
  double snippet_seconds() const { return static_cast<double>(snippet_stride) / fps; }
  double duration() const { return static_cast<double>(num_snippets) * snippet_seconds(); }
  void validate() const;
};

// Keyframe pixel coordinates.
struct SubjectBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double confidence = 1.0;

  double area() const { return (x2 - x1) * (y2 - y1); }
};

// Individual tokens p_1..p_K and group token g of one snippet.
struct TokenSet {
  std::vector<Tensor> individual;  // K vectors of size D
  Tensor group;                    // size D, empty until aggregated
  std::vector<bool> valid;         // length K

  std::size_t num_valid() const;
};

struct RoiBins {
  std::size_t h = 7;
  std::size_t w = 7;
};

// Clips to the frame; boxes with no area inside it are dropped.
std::vector<SubjectBox> clip_boxes(const std::vector<SubjectBox>& boxes, const VideoMeta& meta);

// Indices into `boxes` of the top-K subjects by clipped area / frame area,
// descending; ties go to higher confidence, then lower index.
std::vector<std::size_t> rank_subject_indices(const std::vector<SubjectBox>& boxes, const VideoMeta& meta,
                                              std::size_t K);
// The ranked boxes themselves, clipped to the frame.
std::vector<SubjectBox> rank_subjects(const std::vector<SubjectBox>& boxes, const VideoMeta& meta, std::size_t K);

// Bilinear sampling taps of each bin over a row-major (h, w) cell grid.
// Sample points use the half-cell-offset convention: cell (i, j) holds the
// value at continuous coordinate (i + 0.5, j + 0.5).
std::vector<ops::RowTaps> roi_align_taps(const SubjectBox& box, const VideoMeta& meta, RoiBins bins);

// feature: [H*W x D] node for one snippet. Returns [b_h*b_w x D].
Var roi_align(Graph& g, Var feature, const SubjectBox& box, const VideoMeta& meta, RoiBins bins = {});
// feature: [H x W x D]. Returns [b_h x b_w x D].
Tensor roi_align(const Tensor& feature, const SubjectBox& box, const VideoMeta& meta, RoiBins bins = {});

struct TokenVars {
  std::vector<Var> individual;  // K nodes of shape [D]
  std::vector<bool> valid;
};

TokenVars extract_tokens(Graph& g, Var feature, const std::vector<SubjectBox>& boxes, const VideoMeta& meta,
                         std::size_t K, RoiBins bins = {});
// Group token left empty.
TokenSet extract_tokens(const Tensor& feature, const std::vector<SubjectBox>& boxes, const VideoMeta& meta,
                        std::size_t K, RoiBins bins = {});

// Mean over all H*W cells, the initial group token.
Tensor global_average(const Tensor& feature);

}  // namespace petal
