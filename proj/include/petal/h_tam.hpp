#pragma once

#include <vector>

#include "petal/sa_sam.hpp"

// Windowed temporal attention with strided down-sampling, stacked into a
// descending-resolution feature pyramid.
namespace petal {

struct PyramidConfig {
  std::size_t window_size = 9;
  std::size_t num_standard_layers = 2;
  std::size_t num_htam_layers = 5;
  std::size_t alpha = 2;
  std::size_t pyramid_height = 6;
  std::size_t num_heads = 8;
  std::size_t ffn_hidden = 0;  // 0 means 4 * D

  void validate() const;
};

struct PyramidLevel {
  Var features;             // [T_l x D]
  std::size_t stride = 1;   // in snippets
  std::size_t valid_len = 0;
  ops::Mask mask;           // length T_l, true for real (unpadded) steps
};

struct FeaturePyramid {
  std::vector<PyramidLevel> levels;
};

// Band mask |i - j| <= (window_size - 1) / 2 intersected with the pad mask.
ops::Mask window_mask(const ops::Mask& pad_mask, std::size_t window_size);

Var windowed_mhsa(Graph& g, const MultiHeadAttention& attn, Var x, const ops::Mask& pad_mask, std::size_t window_size,
                  std::vector<Tensor>* weights = nullptr);

// Level lengths from the ceil recurrence T_{l+1} = ceil(T_l / alpha).
std::vector<std::size_t> pyramid_lengths(std::size_t T, const PyramidConfig& cfg);

// Windowed attention block followed by a stride-alpha depth-wise
// convolution with kernel size alpha.
class TemporalBlock {
 public:
  TemporalBlock(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t alpha,
                const PyramidConfig& cfg, Rng& rng);

  struct Output {
    Var features;
    ops::Mask mask;
  };
  Output forward(Graph& g, Var x, const ops::Mask& pad_mask) const;

  const AttentionBlock& block() const { return block_; }
  Parameter& down_weight() const { return *down_w_; }
  Parameter& down_bias() const { return *down_b_; }
  std::size_t alpha() const { return alpha_; }

 private:
  std::size_t alpha_;
  std::size_t window_;
  AttentionBlock block_;
  Parameter *down_w_, *down_b_;
};

class TemporalPyramid {
 public:
  TemporalPyramid(ParamStore& store, const std::string& prefix, std::size_t dim, const PyramidConfig& cfg, Rng& rng);

  // g_seq: [T x D] group tokens; pad_mask empty means all steps are real.
  FeaturePyramid forward(Graph& g, Var g_seq, const ops::Mask& pad_mask = {}) const;

  const PyramidConfig& config() const { return cfg_; }
  const std::vector<TemporalBlock>& blocks() const { return blocks_; }

 private:
  PyramidConfig cfg_;
  Parameter *map1_w_, *map1_b_, *map2_w_, *map2_b_;
  std::vector<TemporalBlock> blocks_;  // standard blocks first, then strided
};

}  // namespace petal
