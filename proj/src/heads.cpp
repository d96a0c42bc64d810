#include "petal/heads.hpp"

#include <algorithm>
#include <cmath>

#include "petal/errors.hpp"

namespace petal {

std::size_t TargetMap::num_positive() const {
  std::size_t n = 0;
  for (const auto& l : levels) n += static_cast<std::size_t>(std::count(l.inside.begin(), l.inside.end(), true));
  return n;
}

DetectionHeads::DetectionHeads(ParamStore& store, const std::string& prefix, std::size_t dim, int num_classes, Rng& rng,
                               double cls_prior)
    : num_classes_(num_classes) {
  if (num_classes <= 0) throw std::invalid_argument("heads: num_classes must be positive");
  const auto C = static_cast<std::size_t>(num_classes);
  for (std::size_t i = 0; i < kTowerDepth; ++i) {
    const std::string n = std::to_string(i);
    cls_w_.push_back(&store.xavier(prefix + ".cls" + n + ".w", {3, dim, dim}, 3 * dim, 3 * dim, rng));
    cls_b_.push_back(&store.constant(prefix + ".cls" + n + ".b", {dim}, 0.0));
  }
  for (std::size_t i = 0; i < kTowerDepth; ++i) {
    const std::string n = std::to_string(i);
    reg_w_.push_back(&store.xavier(prefix + ".reg" + n + ".w", {3, dim, dim}, 3 * dim, 3 * dim, rng));
    reg_b_.push_back(&store.constant(prefix + ".reg" + n + ".b", {dim}, 0.0));
  }
  cls_out_w_ = &store.xavier(prefix + ".cls_out.w", {1, dim, C}, dim, C, rng);
  cls_out_b_ = &store.constant(prefix + ".cls_out.b", {C}, -std::log((1.0 - cls_prior) / cls_prior));
  reg_out_w_ = &store.xavier(prefix + ".reg_out.w", {1, dim, 2}, dim, 2, rng);
  // A positive start keeps both ReLU offset outputs alive at initialization.
  reg_out_b_ = &store.constant(prefix + ".reg_out.b", {2}, 1.0);
}

Var DetectionHeads::tower(Graph& g, Var x, const ops::Mask& mask, const std::vector<Parameter*>& ws,
                          const std::vector<Parameter*>& bs) const {
  for (std::size_t i = 0; i < ws.size(); ++i) {
    x = ops::conv1d(g, x, g.param(*ws[i]), g.param(*bs[i]), 1, ops::Padding::Same);
    x = ops::mask_rows(g, ops::relu(g, x), mask);
  }
  return x;
}

HeadOutput DetectionHeads::forward(Graph& g, const FeaturePyramid& pyr) const {
  if (pyr.levels.empty()) throw std::invalid_argument("heads: empty pyramid");
  HeadOutput out;
  for (const auto& lvl : pyr.levels) {
    const Var c = tower(g, lvl.features, lvl.mask, cls_w_, cls_b_);
    const Var r = tower(g, lvl.features, lvl.mask, reg_w_, reg_b_);
    LevelOutput lo;
    lo.logits = ops::conv1d(g, c, g.param(*cls_out_w_), g.param(*cls_out_b_), 1, ops::Padding::Same);
    lo.offsets = ops::relu(g, ops::conv1d(g, r, g.param(*reg_out_w_), g.param(*reg_out_b_), 1, ops::Padding::Same));
    lo.stride = lvl.stride;
    lo.valid_len = lvl.valid_len;
    out.levels.push_back(lo);
  }
  return out;
}

TargetMap assign_targets(const std::vector<GroundTruthSegment>& gts, const std::vector<LevelShape>& levels, double fps,
                         std::size_t snippet_stride, int num_classes) {
  for (const auto& s : gts) {
    if (!(s.start < s.end)) throw ValidationError("assign_targets: segment start must precede end");
    if (s.class_id < 0 || s.class_id >= num_classes) throw ValidationError("assign_targets: class id out of range");
  }
  constexpr double kTol = 1e-9;
  const double snippet_sec = static_cast<double>(snippet_stride) / fps;
  TargetMap tm;
  tm.num_classes = num_classes;
  for (const auto& shape : levels) {
    LevelTargets lt;
    lt.class_target.assign(shape.length, num_classes);
    lt.d_start.assign(shape.length, 0.0);
    lt.d_end.assign(shape.length, 0.0);
    lt.inside.assign(shape.length, false);
    lt.valid_len = shape.valid_len;
    const double unit = static_cast<double>(shape.stride) * snippet_sec;
    for (std::size_t t = 0; t < shape.valid_len; ++t) {
      const double time = static_cast<double>(t * shape.stride) * snippet_sec;
      const GroundTruthSegment* best = nullptr;
      for (const auto& s : gts) {
        if (time < s.start - kTol || time > s.end + kTol) continue;
        if (best == nullptr) {
          best = &s;
          continue;
        }
        const double dur = s.end - s.start, best_dur = best->end - best->start;
        if (dur < best_dur || (dur == best_dur && s.start < best->start)) best = &s;
      }
      if (best == nullptr) continue;
      lt.class_target[t] = best->class_id;
      lt.d_start[t] = std::max(0.0, (time - best->start) / unit);
      lt.d_end[t] = std::max(0.0, (best->end - time) / unit);
      lt.inside[t] = true;
    }
    tm.levels.push_back(std::move(lt));
  }
  return tm;
}

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// d(focal_term)/d(logit).
double focal_grad(double x, bool positive, double alpha, double gamma) {
  const double p = sigmoid(x);
  if (positive) {
    const double q = 1.0 - p;
    return -alpha * std::pow(q, gamma) * (gamma * p * softplus(-x) + q);
  }
  return (1.0 - alpha) * std::pow(p, gamma) * (gamma * (1.0 - p) * softplus(x) + p);
}

}  // namespace

double focal_term(double logit, bool positive, double alpha, double gamma) {
  const double p = sigmoid(logit);
  // -log p = softplus(-x), -log(1 - p) = softplus(x)
  if (positive) return alpha * std::pow(1.0 - p, gamma) * softplus(-logit);
  return (1.0 - alpha) * std::pow(p, gamma) * softplus(logit);
}

double giou_loss_1d(double ps, double pe, double ts, double te) {
  const double inter = std::min(ps, ts) + std::min(pe, te);
  // Both intervals contain the anchor, so the union equals the hull and the
  // GIoU penalty (hull - union) / hull vanishes. Summing the maxima instead of
  // ps + pe + ts + te - inter keeps exact matches at exactly 0.
  const double hull = std::max(ps, ts) + std::max(pe, te);
  return 1.0 - inter / hull;
}

Var focal_loss(Graph& g, Var logits, const LevelTargets& targets, bool include_background, double alpha,
               double gamma) {
  const Tensor& x = g.value(logits);
  const std::size_t T = x.rows(), C = x.cols();
  if (targets.class_target.size() != T) throw DimensionError("focal_loss: targets do not match logits");
  const std::size_t n = std::min(targets.valid_len, T);
  auto used = [&](std::size_t t) { return targets.inside[t] || include_background; };
  double total = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    if (!used(t)) continue;
    for (std::size_t c = 0; c < C; ++c)
      total += focal_term(x.at(t, c), targets.class_target[t] == static_cast<int>(c), alpha, gamma);
  }
  const Var in[] = {logits};
  return g.push(Tensor({}, {total}), in, [=, cls = targets.class_target, inside = targets.inside](
                                            Graph& gr, std::span<const double> dy, const Tensor&) {
    const auto xd = gr.value(logits).data();
    auto d = gr.grad_of(logits);
    for (std::size_t t = 0; t < n; ++t) {
      if (!inside[t] && !include_background) continue;
      for (std::size_t c = 0; c < C; ++c)
        d[t * C + c] += dy[0] * focal_grad(xd[t * C + c], cls[t] == static_cast<int>(c), alpha, gamma);
    }
  });
}

Var giou_loss(Graph& g, Var offsets, const LevelTargets& targets) {
  const Tensor& o = g.value(offsets);
  const std::size_t T = o.rows();
  if (o.cols() != 2 || targets.inside.size() != T) throw DimensionError("giou_loss: offsets must be [T x 2] matching targets");
  const std::size_t n = std::min(targets.valid_len, T);
  double total = 0.0;
  for (std::size_t t = 0; t < n; ++t)
    if (targets.inside[t]) total += giou_loss_1d(o.at(t, 0), o.at(t, 1), targets.d_start[t], targets.d_end[t]);
  const Var in[] = {offsets};
  return g.push(Tensor({}, {total}), in, [=, ds = targets.d_start, de = targets.d_end, inside = targets.inside](
                                             Graph& gr, std::span<const double> dy, const Tensor&) {
    const auto od = gr.value(offsets).data();
    auto d = gr.grad_of(offsets);
    for (std::size_t t = 0; t < n; ++t) {
      if (!inside[t]) continue;
      const double ps = od[2 * t], pe = od[2 * t + 1];
      const double I = std::min(ps, ds[t]) + std::min(pe, de[t]);
      const double H = std::max(ps, ds[t]) + std::max(pe, de[t]);
      // L = 1 - I/H
      const double dIs = ps < ds[t] ? 1.0 : 0.0, dIe = pe < de[t] ? 1.0 : 0.0;
      const double dHs = ps > ds[t] ? 1.0 : 0.0, dHe = pe > de[t] ? 1.0 : 0.0;
      auto dl = [&](double dI, double dH) { return -(dI * H - I * dH) / (H * H); };
      d[2 * t] += dy[0] * dl(dIs, dHs);
      d[2 * t + 1] += dy[0] * dl(dIe, dHe);
    }
  });
}

Var total_loss(Graph& g, const HeadOutput& outs, const TargetMap& targets, const LossConfig& cfg) {
  if (outs.levels.size() != targets.levels.size()) throw DimensionError("total_loss: level count mismatch");
  const std::size_t npos = targets.num_positive();
  // With no positives only negative terms remain.
  const bool background = !cfg.strict_eq3 || npos == 0;
  Var acc;
  for (std::size_t l = 0; l < outs.levels.size(); ++l) {
    Var term = focal_loss(g, outs.levels[l].logits, targets.levels[l], background, cfg.focal_alpha, cfg.focal_gamma);
    if (cfg.lambda != 0.0) term = ops::add(g, term, ops::scale(g, giou_loss(g, outs.levels[l].offsets, targets.levels[l]), cfg.lambda));
    acc = acc.valid() ? ops::add(g, acc, term) : term;
  }
  return ops::scale(g, acc, 1.0 / static_cast<double>(std::max<std::size_t>(npos, 1)));
}

}  // namespace petal
