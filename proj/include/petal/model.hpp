#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "petal/dataio.hpp"
#include "petal/h_tam.hpp"
#include "petal/heads.hpp"
#include "petal/inference.hpp"
#include "petal/sa_drm.hpp"
#include "petal/sa_sam.hpp"

namespace petal {

struct ModelConfig {
  std::size_t feature_dim = 16;
  int num_classes = 2;
  std::size_t K = 6;                  // ranked subjects per snippet
  std::size_t L1 = 8;                 // SA-SAM layers
  std::size_t num_heads = 8;
  std::size_t window_size = 9;
  std::size_t alpha = 2;
  std::size_t num_standard_layers = 2;
  std::size_t pyramid_height = 6;     // 1 + number of H-TAM layers
  RoiBins roi_bins{};
  double cls_prior = 0.01;
  // false replaces subject tokens and SA-SAM by the global snippet average.
  bool subject_tokens = true;

  void validate() const;
  AttentionConfig attention() const;
  PyramidConfig pyramid() const;
};

std::string encode_model_config(const ModelConfig& cfg);
ModelConfig decode_model_config(const std::string& text);

// Per-video inputs with the (constant) subject tokens precomputed.
struct Sample {
  std::string id;
  VideoMeta meta;
  std::vector<TokenSet> tokens;  // per snippet, K tokens
  std::vector<Tensor> global;    // per snippet global average, [D]
  std::vector<GroundTruthSegment> segments;
};

Sample make_sample(const io::VideoData& video, const ModelConfig& cfg);

class PetalModel {
 public:
  PetalModel(const ModelConfig& cfg, std::uint64_t seed);

  // [T x D] snippet representations (group tokens or global averages).
  Var snippet_sequence(Graph& g, const Sample& s) const;
  HeadOutput forward(Graph& g, const Sample& s) const;
  Var loss(Graph& g, const Sample& s, const LossConfig& cfg) const;
  std::vector<ActionSegment> predict(const Sample& s, const DecodeConfig& dcfg = {}, const SoftNmsConfig& ncfg = {}) const;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return *store_; }
  const ParamStore& params() const { return *store_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<ParamStore> store_;
  std::optional<SubjectAttention> sam_;
  std::optional<TemporalPyramid> pyramid_;
  std::optional<DetectionHeads> heads_;
};

}  // namespace petal
