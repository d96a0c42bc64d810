#pragma once

#include <vector>

#include "petal/h_tam.hpp"

// Shared classification / regression heads, target assignment and losses.
namespace petal {

struct GroundTruthSegment {
  int class_id = 0;
  double start = 0;  // seconds
  double end = 0;    // seconds
};

struct LevelShape {
  std::size_t length = 0;
  std::size_t stride = 1;
  std::size_t valid_len = 0;  // steps >= valid_len are padding
};

struct LevelTargets {
  std::vector<int> class_target;  // num_classes marks background
  std::vector<double> d_start;    // level steps; 0 for background
  std::vector<double> d_end;
  std::vector<bool> inside;
  std::size_t valid_len = 0;
};

struct TargetMap {
  int num_classes = 0;
  std::vector<LevelTargets> levels;

  std::size_t num_positive() const;
};

struct LevelOutput {
  Var logits;   // [T_l x C]
  Var offsets;  // [T_l x 2], nonnegative
  std::size_t stride = 1;
  std::size_t valid_len = 0;
};

struct HeadOutput {
  std::vector<LevelOutput> levels;
};

struct LossConfig {
  double lambda = 1.0;
  // Only steps in T+ contribute classification terms (literal reading of
  // the loss); otherwise background steps add negative-class terms.
  bool strict_eq3 = false;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

class DetectionHeads {
 public:
  static constexpr std::size_t kTowerDepth = 4;

  // cls_prior sets the initial classifier bias to -log((1 - p) / p).
  DetectionHeads(ParamStore& store, const std::string& prefix, std::size_t dim, int num_classes, Rng& rng,
                 double cls_prior = 0.01);

  HeadOutput forward(Graph& g, const FeaturePyramid& pyr) const;

  int num_classes() const { return num_classes_; }
  Parameter& cls_out_weight() const { return *cls_out_w_; }
  Parameter& cls_out_bias() const { return *cls_out_b_; }
  Parameter& reg_out_weight() const { return *reg_out_w_; }
  Parameter& reg_out_bias() const { return *reg_out_b_; }

 private:
  Var tower(Graph& g, Var x, const ops::Mask& mask, const std::vector<Parameter*>& ws,
            const std::vector<Parameter*>& bs) const;

  int num_classes_;
  std::vector<Parameter*> cls_w_, cls_b_, reg_w_, reg_b_;
  Parameter *cls_out_w_, *cls_out_b_, *reg_out_w_, *reg_out_b_;
};

// Per-step assignment: step t of a level with stride s sits at time
// t * s * snippet_stride / fps. Among segments containing it the shortest wins
// (ties: earlier start, then input order).
TargetMap assign_targets(const std::vector<GroundTruthSegment>& gts, const std::vector<LevelShape>& levels, double fps,
                         std::size_t snippet_stride, int num_classes);

// Sigmoid focal loss of one logit against a binary label.
double focal_term(double logit, bool positive, double alpha = 0.25, double gamma = 2.0);
// 1 - IoU + (|C| - |P u G|) / |C| for intervals sharing an anchor point.
double giou_loss_1d(double pred_start, double pred_end, double tgt_start, double tgt_end);

// Sum of one-vs-all focal terms over real steps of one level.
Var focal_loss(Graph& g, Var logits, const LevelTargets& targets, bool include_background, double alpha = 0.25,
               double gamma = 2.0);
// Sum of GIoU losses over inside steps of one level.
Var giou_loss(Graph& g, Var offsets, const LevelTargets& targets);

Var total_loss(Graph& g, const HeadOutput& outs, const TargetMap& targets, const LossConfig& cfg = {});

}  // namespace petal
