#pragma once

#include <string>
#include <vector>

#include "petal/ops.hpp"
#include "petal/params.hpp"
#include "petal/sa_drm.hpp"

namespace petal {

struct AttentionConfig {
  std::size_t embed_dim = 0;
  std::size_t num_heads = 8;
  std::size_t ffn_hidden = 0;  // 0 means 4 * embed_dim
  std::size_t num_layers = 8;

  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t hidden() const { return ffn_hidden == 0 ? 4 * embed_dim : ffn_hidden; }
  void validate() const;
};

// Q/K/V projections, the fused attention core and the output projection.
class MultiHeadAttention {
 public:
  MultiHeadAttention(ParamStore& store, const std::string& prefix, const AttentionConfig& cfg, Rng& rng);

  // Output rows for row_valid == false are zero.
  Var forward(Graph& g, Var x, const ops::Mask& allowed, const ops::Mask& row_valid,
              std::vector<Tensor>* weights = nullptr) const;

  Parameter& out_weight() const { return *wo_; }
  Parameter& out_bias() const { return *bo_; }

 private:
  std::size_t heads_;
  Parameter *wq_, *bq_, *wk_, *bk_, *wv_, *bv_, *wo_, *bo_;
};

// Pre-norm residual block:
//   Z' = mask(MHSA(LN(Z)) + Z),  Z'' = mask(FFN(LN(Z')) + Z')
// with FFN = linear -> ReLU -> linear. Masked rows are re-zeroed after each
// residual add so they stay exactly zero through a stack.
class AttentionBlock {
 public:
  AttentionBlock(ParamStore& store, const std::string& prefix, const AttentionConfig& cfg, Rng& rng);

  Var forward(Graph& g, Var z, const ops::Mask& allowed, const ops::Mask& row_valid,
              std::vector<Tensor>* weights = nullptr) const;

  const MultiHeadAttention& attention() const { return attn_; }
  Parameter& ffn_out_weight() const { return *w2_; }
  Parameter& ffn_out_bias() const { return *b2_; }

 private:
  Parameter *ln1_g_, *ln1_b_;
  MultiHeadAttention attn_;
  Parameter *ln2_g_, *ln2_b_;
  Parameter *w1_, *b1_, *w2_, *b2_;
};

// Set attention mask: i may attend to j iff both are valid.
ops::Mask set_attention_mask(const std::vector<bool>& valid);

// Masked self-attention over the K + 1 tokens of a snippet. valid has K + 1
// entries; the last (group) position must be valid.
Var mhsa(Graph& g, const MultiHeadAttention& attn, Var z, const std::vector<bool>& valid,
         std::vector<Tensor>* weights = nullptr);

// Stacked subject-aware spatial attention producing the group token.
class SubjectAttention {
 public:
  SubjectAttention(ParamStore& store, const std::string& prefix, const AttentionConfig& cfg, Rng& rng);

  // One layer on Z^l ([(K+1) x D]).
  Var layer(Graph& g, std::size_t l, Var z, const std::vector<bool>& valid) const;

  // Builds Z^0 = [p_1 .. p_K; g^0], runs every layer and returns row K.
  Var aggregate(Graph& g, const std::vector<Var>& tokens, const std::vector<bool>& valid, Var group_init) const;
  Tensor aggregate(const TokenSet& tokens, const Tensor& group_init) const;

  const AttentionConfig& config() const { return cfg_; }
  const std::vector<AttentionBlock>& layers() const { return layers_; }

 private:
  AttentionConfig cfg_;
  std::vector<AttentionBlock> layers_;
};

}  // namespace petal
