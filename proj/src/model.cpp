#include "petal/model.hpp"

#include "json.hpp"
#include "petal/errors.hpp"
#include "petal/rng.hpp"

namespace petal {

void ModelConfig::validate() const {
  if (feature_dim == 0 || num_classes <= 0) throw ValidationError("model: feature_dim and num_classes must be positive");
  if (K == 0) throw ValidationError("model: K must be >= 1");
  if (num_heads == 0 || feature_dim % num_heads != 0)
    throw ValidationError("model: feature_dim must be divisible by num_heads");
  if (roi_bins.h == 0 || roi_bins.w == 0) throw ValidationError("model: RoI bins must be positive");
  if (!(cls_prior > 0 && cls_prior < 1)) throw ValidationError("model: cls_prior must lie in (0, 1)");
  attention().validate();
  try {
    pyramid().validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
}

AttentionConfig ModelConfig::attention() const {
  AttentionConfig a;
  a.embed_dim = feature_dim;
  a.num_heads = num_heads;
  a.num_layers = L1;
  return a;
}

PyramidConfig ModelConfig::pyramid() const {
  PyramidConfig p;
  p.window_size = window_size;
  p.num_standard_layers = num_standard_layers;
  p.num_htam_layers = pyramid_height == 0 ? 0 : pyramid_height - 1;
  p.alpha = alpha;
  p.pyramid_height = pyramid_height;
  p.num_heads = num_heads;
  return p;
}

std::string encode_model_config(const ModelConfig& c) {
  nlohmann::json j = {{"feature_dim", c.feature_dim}, {"num_classes", c.num_classes},
                      {"K", c.K},                     {"L1", c.L1},
                      {"num_heads", c.num_heads},     {"window_size", c.window_size},
                      {"alpha", c.alpha},             {"num_standard_layers", c.num_standard_layers},
                      {"pyramid_height", c.pyramid_height}, {"roi_bins", {c.roi_bins.h, c.roi_bins.w}},
                      {"cls_prior", c.cls_prior},     {"subject_tokens", c.subject_tokens}};
  return j.dump(2);
}

ModelConfig decode_model_config(const std::string& text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.feature_dim = j.at("feature_dim").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<int>();
    c.K = j.at("K").get<std::size_t>();
    c.L1 = j.at("L1").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.window_size = j.at("window_size").get<std::size_t>();
    c.alpha = j.at("alpha").get<std::size_t>();
    c.num_standard_layers = j.at("num_standard_layers").get<std::size_t>();
    c.pyramid_height = j.at("pyramid_height").get<std::size_t>();
    c.roi_bins = {j.at("roi_bins").at(0).get<std::size_t>(), j.at("roi_bins").at(1).get<std::size_t>()};
    c.cls_prior = j.at("cls_prior").get<double>();
    c.subject_tokens = j.at("subject_tokens").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

Sample make_sample(const io::VideoData& video, const ModelConfig& cfg) {
  const auto& a = video.annotation;
  Sample s;
  s.id = a.id;
  s.meta = a.meta(video.features);
  if (s.meta.feature_dim != cfg.feature_dim)
    throw ValidationError("video '" + a.id + "': feature_dim " + std::to_string(s.meta.feature_dim) +
                          " does not match model " + std::to_string(cfg.feature_dim));
  a.validate(cfg.num_classes);
  s.segments = a.segments;
  for (std::size_t t = 0; t < s.meta.num_snippets; ++t) {
    const Tensor f = video.features.snippet(t);
    s.global.push_back(global_average(f));
    if (cfg.subject_tokens) s.tokens.push_back(extract_tokens(f, a.boxes[t], s.meta, cfg.K, cfg.roi_bins));
  }
  return s;
}

PetalModel::PetalModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(std::make_unique<ParamStore>()) {
  cfg_.validate();
  Rng rng(seed);
  if (cfg_.subject_tokens) sam_.emplace(*store_, "sam", cfg_.attention(), rng);
  pyramid_.emplace(*store_, "pyramid", cfg_.feature_dim, cfg_.pyramid(), rng);
  heads_.emplace(*store_, "heads", cfg_.feature_dim, cfg_.num_classes, rng, cfg_.cls_prior);
}

Var PetalModel::snippet_sequence(Graph& g, const Sample& s) const {
  std::vector<Var> rows;
  for (std::size_t t = 0; t < s.global.size(); ++t) {
    const Var g0 = g.constant(s.global[t]);
    if (!sam_) {
      rows.push_back(g0);
      continue;
    }
    std::vector<Var> toks;
    for (const auto& p : s.tokens[t].individual) toks.push_back(g.constant(p));
    rows.push_back(sam_->aggregate(g, toks, s.tokens[t].valid, g0));
  }
  return ops::stack_rows(g, rows);
}

HeadOutput PetalModel::forward(Graph& g, const Sample& s) const {
  return heads_->forward(g, pyramid_->forward(g, snippet_sequence(g, s)));
}

Var PetalModel::loss(Graph& g, const Sample& s, const LossConfig& cfg) const {
  const HeadOutput out = forward(g, s);
  std::vector<LevelShape> shapes;
  for (const auto& l : out.levels) shapes.push_back({g.value(l.logits).rows(), l.stride, l.valid_len});
  const TargetMap tm = assign_targets(s.segments, shapes, s.meta.fps, s.meta.snippet_stride, cfg_.num_classes);
  return total_loss(g, out, tm, cfg);
}

std::vector<ActionSegment> PetalModel::predict(const Sample& s, const DecodeConfig& dcfg, const SoftNmsConfig& ncfg) const {
  Graph g;
  const HeadOutput out = forward(g, s);
  return postprocess(predictions(g, out), s.meta, dcfg, ncfg);
}

}  // namespace petal
