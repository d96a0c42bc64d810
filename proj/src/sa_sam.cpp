#include "petal/sa_sam.hpp"

#include <algorithm>

#include "petal/errors.hpp"

namespace petal {

void AttentionConfig::validate() const {
  if (embed_dim == 0 || num_heads == 0) throw std::invalid_argument("attention: embed_dim and num_heads must be positive");
  if (embed_dim % num_heads != 0) {
    throw std::invalid_argument("attention: embed_dim " + std::to_string(embed_dim) + " not divisible by " +
                                std::to_string(num_heads) + " heads");
  }
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& prefix, const AttentionConfig& cfg,
                                       Rng& rng)
    : heads_(cfg.num_heads) {
  cfg.validate();
  const std::size_t D = cfg.embed_dim;
  wq_ = &store.xavier(prefix + ".wq", {D, D}, D, D, rng);
  bq_ = &store.constant(prefix + ".bq", {D}, 0.0);
  wk_ = &store.xavier(prefix + ".wk", {D, D}, D, D, rng);
  bk_ = &store.constant(prefix + ".bk", {D}, 0.0);
  wv_ = &store.xavier(prefix + ".wv", {D, D}, D, D, rng);
  bv_ = &store.constant(prefix + ".bv", {D}, 0.0);
  wo_ = &store.xavier(prefix + ".wo", {D, D}, D, D, rng);
  bo_ = &store.constant(prefix + ".bo", {D}, 0.0);
}

Var MultiHeadAttention::forward(Graph& g, Var x, const ops::Mask& allowed, const ops::Mask& row_valid,
                                std::vector<Tensor>* weights) const {
  const Var q = ops::linear(g, x, g.param(*wq_), g.param(*bq_));
  const Var k = ops::linear(g, x, g.param(*wk_), g.param(*bk_));
  const Var v = ops::linear(g, x, g.param(*wv_), g.param(*bv_));
  const Var heads = ops::attention(g, q, k, v, allowed, row_valid, heads_, weights);
  return ops::mask_rows(g, ops::linear(g, heads, g.param(*wo_), g.param(*bo_)), row_valid);
}

AttentionBlock::AttentionBlock(ParamStore& store, const std::string& prefix, const AttentionConfig& cfg, Rng& rng)
    : ln1_g_(&store.constant(prefix + ".ln1.gamma", {cfg.embed_dim}, 1.0)),
      ln1_b_(&store.constant(prefix + ".ln1.beta", {cfg.embed_dim}, 0.0)),
      attn_(store, prefix + ".attn", cfg, rng) {
  const std::size_t D = cfg.embed_dim, Hd = cfg.hidden();
  ln2_g_ = &store.constant(prefix + ".ln2.gamma", {D}, 1.0);
  ln2_b_ = &store.constant(prefix + ".ln2.beta", {D}, 0.0);
  w1_ = &store.xavier(prefix + ".ffn.w1", {D, Hd}, D, Hd, rng);
  b1_ = &store.constant(prefix + ".ffn.b1", {Hd}, 0.0);
  w2_ = &store.xavier(prefix + ".ffn.w2", {Hd, D}, Hd, D, rng);
  b2_ = &store.constant(prefix + ".ffn.b2", {D}, 0.0);
}

namespace {
constexpr double kLayerNormEps = 1e-5;
}

Var AttentionBlock::forward(Graph& g, Var z, const ops::Mask& allowed, const ops::Mask& row_valid,
                            std::vector<Tensor>* weights) const {
  const Var n1 = ops::layer_norm(g, z, g.param(*ln1_g_), g.param(*ln1_b_), kLayerNormEps);
  const Var a = attn_.forward(g, n1, allowed, row_valid, weights);
  const Var z1 = ops::mask_rows(g, ops::add(g, a, z), row_valid);
  const Var n2 = ops::layer_norm(g, z1, g.param(*ln2_g_), g.param(*ln2_b_), kLayerNormEps);
  const Var h = ops::relu(g, ops::linear(g, n2, g.param(*w1_), g.param(*b1_)));
  const Var f = ops::linear(g, h, g.param(*w2_), g.param(*b2_));
  return ops::mask_rows(g, ops::add(g, f, z1), row_valid);
}

ops::Mask set_attention_mask(const std::vector<bool>& valid) {
  const std::size_t n = valid.size();
  ops::Mask m(n * n, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m[i * n + j] = valid[i] && valid[j];
  return m;
}

Var mhsa(Graph& g, const MultiHeadAttention& attn, Var z, const std::vector<bool>& valid,
         std::vector<Tensor>* weights) {
  if (std::none_of(valid.begin(), valid.end(), [](bool b) { return b; })) {
    throw InvalidMaskError("mhsa: no valid token positions");
  }
  return attn.forward(g, z, set_attention_mask(valid), valid, weights);
}

SubjectAttention::SubjectAttention(ParamStore& store, const std::string& prefix, const AttentionConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg.validate();
  layers_.reserve(cfg.num_layers);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) layers_.emplace_back(store, prefix + ".layer" + std::to_string(l), cfg, rng);
}

Var SubjectAttention::layer(Graph& g, std::size_t l, Var z, const std::vector<bool>& valid) const {
  if (valid.empty() || !valid.back()) throw InvalidMaskError("sa_sam: the group token position must be valid");
  return layers_.at(l).forward(g, z, set_attention_mask(valid), valid);
}

Var SubjectAttention::aggregate(Graph& g, const std::vector<Var>& tokens, const std::vector<bool>& valid,
                                Var group_init) const {
  if (tokens.size() != valid.size()) throw DimensionError("sa_sam: token and mask counts differ");
  if (layers_.empty()) return group_init;
  std::vector<Var> rows = tokens;
  rows.push_back(group_init);
  std::vector<bool> full_valid = valid;
  full_valid.push_back(true);
  const auto allowed = set_attention_mask(full_valid);
  Var z = ops::stack_rows(g, rows);
  for (const auto& blk : layers_) z = blk.forward(g, z, allowed, full_valid);
  return ops::select_row(g, z, tokens.size());
}

Tensor SubjectAttention::aggregate(const TokenSet& tokens, const Tensor& group_init) const {
  Graph g;
  std::vector<Var> vars;
  for (const auto& t : tokens.individual) vars.push_back(g.constant(t));
  const Var out = aggregate(g, vars, tokens.valid, g.constant(group_init));
  return g.value(out);
}

}  // namespace petal
