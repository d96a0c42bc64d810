#include "petal/h_tam.hpp"

#include <algorithm>

#include "petal/errors.hpp"

namespace petal {

void PyramidConfig::validate() const {
  if (window_size == 0 || window_size % 2 == 0) throw std::invalid_argument("pyramid: window_size must be odd");
  if (alpha == 0) throw std::invalid_argument("pyramid: alpha must be >= 1");
  if (pyramid_height != 1 + num_htam_layers) {
    throw std::invalid_argument("pyramid: pyramid_height must equal 1 + num_htam_layers (got " +
                                std::to_string(pyramid_height) + " vs " + std::to_string(num_htam_layers) + ")");
  }
}

ops::Mask window_mask(const ops::Mask& pad_mask, std::size_t window_size) {
  const std::size_t n = pad_mask.size();
  const std::size_t r = (window_size - 1) / 2;
  ops::Mask m(n * n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (!pad_mask[i]) continue;
    const std::size_t lo = i >= r ? i - r : 0;
    const std::size_t hi = std::min(n - 1, i + r);
    for (std::size_t j = lo; j <= hi; ++j) m[i * n + j] = pad_mask[j];
  }
  return m;
}

Var windowed_mhsa(Graph& g, const MultiHeadAttention& attn, Var x, const ops::Mask& pad_mask, std::size_t window_size,
                  std::vector<Tensor>* weights) {
  if (window_size == 0 || window_size % 2 == 0) throw std::invalid_argument("windowed_mhsa: window_size must be odd");
  if (std::none_of(pad_mask.begin(), pad_mask.end(), [](bool b) { return b; })) {
    throw InvalidMaskError("windowed_mhsa: every time step is padding");
  }
  return attn.forward(g, x, window_mask(pad_mask, window_size), pad_mask, weights);
}

std::vector<std::size_t> pyramid_lengths(std::size_t T, const PyramidConfig& cfg) {
  std::vector<std::size_t> out{T};
  for (std::size_t l = 0; l < cfg.num_htam_layers; ++l) out.push_back((out.back() + cfg.alpha - 1) / cfg.alpha);
  return out;
}

namespace {

AttentionConfig block_config(std::size_t dim, const PyramidConfig& cfg) {
  return AttentionConfig{dim, cfg.num_heads, cfg.ffn_hidden, 1};
}

ops::Mask downsample_mask(const ops::Mask& m, std::size_t alpha) {
  ops::Mask out((m.size() + alpha - 1) / alpha, false);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) out[i / alpha] = true;
  return out;
}

}  // namespace

TemporalBlock::TemporalBlock(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t alpha,
                             const PyramidConfig& cfg, Rng& rng)
    : alpha_(alpha), window_(cfg.window_size), block_(store, prefix, block_config(dim, cfg), rng) {
  // Starts as an average over each stride window.
  down_w_ = &store.constant(prefix + ".down.w", {alpha, dim}, 1.0 / static_cast<double>(alpha));
  down_b_ = &store.constant(prefix + ".down.b", {dim}, 0.0);
}

TemporalBlock::Output TemporalBlock::forward(Graph& g, Var x, const ops::Mask& pad_mask) const {
  if (std::none_of(pad_mask.begin(), pad_mask.end(), [](bool b) { return b; })) {
    throw InvalidMaskError("temporal block: every time step is padding");
  }
  const Var z = block_.forward(g, x, window_mask(pad_mask, window_), pad_mask);
  Output out;
  out.mask = downsample_mask(pad_mask, alpha_);
  out.features =
      ops::mask_rows(g, ops::depthwise_conv1d(g, z, g.param(*down_w_), g.param(*down_b_), alpha_), out.mask);
  return out;
}

TemporalPyramid::TemporalPyramid(ParamStore& store, const std::string& prefix, std::size_t dim,
                                 const PyramidConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg.validate();
  map1_w_ = &store.xavier(prefix + ".map1.w", {3, dim, dim}, 3 * dim, 3 * dim, rng);
  map1_b_ = &store.constant(prefix + ".map1.b", {dim}, 0.0);
  map2_w_ = &store.xavier(prefix + ".map2.w", {3, dim, dim}, 3 * dim, 3 * dim, rng);
  map2_b_ = &store.constant(prefix + ".map2.b", {dim}, 0.0);
  blocks_.reserve(cfg.num_standard_layers + cfg.num_htam_layers);
  for (std::size_t l = 0; l < cfg.num_standard_layers; ++l)
    blocks_.emplace_back(store, prefix + ".std" + std::to_string(l), dim, 1, cfg, rng);
  for (std::size_t l = 0; l < cfg.num_htam_layers; ++l)
    blocks_.emplace_back(store, prefix + ".htam" + std::to_string(l), dim, cfg.alpha, cfg, rng);
}

FeaturePyramid TemporalPyramid::forward(Graph& g, Var g_seq, const ops::Mask& pad_mask) const {
  const std::size_t T = g.shape(g_seq).at(0);
  ops::Mask mask = pad_mask.empty() ? ops::Mask(T, true) : pad_mask;
  if (mask.size() != T) throw DimensionError("pyramid: pad mask length does not match sequence");

  Var x = ops::mask_rows(g, g_seq, mask);
  for (auto [w, b] : {std::pair{map1_w_, map1_b_}, std::pair{map2_w_, map2_b_}}) {
    x = ops::conv1d(g, x, g.param(*w), g.param(*b), 1, ops::Padding::Same);
    x = ops::mask_rows(g, ops::relu(g, x), mask);
  }

  FeaturePyramid pyr;
  std::size_t stride = 1;
  auto level = [&](Var f, const ops::Mask& m) {
    pyr.levels.push_back(
        PyramidLevel{f, stride, static_cast<std::size_t>(std::count(m.begin(), m.end(), true)), m});
  };
  for (std::size_t l = 0; l < cfg_.num_standard_layers; ++l) {
    auto o = blocks_[l].forward(g, x, mask);
    x = o.features;
    mask = std::move(o.mask);
  }
  level(x, mask);
  for (std::size_t l = 0; l < cfg_.num_htam_layers; ++l) {
    auto o = blocks_[cfg_.num_standard_layers + l].forward(g, x, mask);
    x = o.features;
    mask = std::move(o.mask);
    stride *= cfg_.alpha;
    level(x, mask);
  }
  return pyr;
}

}  // namespace petal
