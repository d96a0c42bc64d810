#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "petal/dataio.hpp"
#include "petal/model.hpp"

namespace petal {

struct TrainConfig {
  double lr_init = 1e-4;
  std::size_t epochs = 35;
  std::size_t warmup_epochs = 5;
  std::size_t batch_size = 2;
  double ema_decay = 0.99;
  double lambda = 1.0;
  std::size_t K = 6;
  std::size_t L1 = 8;
  std::size_t window_size = 9;
  std::size_t alpha = 2;
  std::size_t pyramid_height = 6;
  std::uint64_t seed = 0;
  bool strict_eq3 = false;
  double weight_decay = 0.0;  // decoupled
  double clip_norm = 1.0;     // global gradient norm; 0 disables

  void validate() const;
  // Copies the architecture fields into a model config.
  void apply(ModelConfig& m) const;
  LossConfig loss() const;
};

// Linear warm-up to lr_init, then half-cosine decay to 0 at total_steps.
double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double lr_init);

// ema <- decay * ema + (1 - decay) * params, elementwise.
void ema_update(std::vector<Tensor>& ema, std::span<const Tensor> params, double decay);
void ema_update(std::vector<Tensor>& ema, const ParamStore& store, double decay);
std::vector<Tensor> parameter_values(const ParamStore& store);

class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0)
      : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

  // One bias-corrected update from each parameter's accumulated grad.
  void step(std::span<Parameter* const> params, double lr);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_, wd_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

double global_grad_norm(std::span<Parameter* const> params);

struct FitResult {
  std::vector<io::EpochLog> log;
  std::vector<Tensor> ema;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(const io::EpochLog&)>;

// Mini-batch Adam with a deterministic per-epoch shuffle. A non-finite loss or
// gradient aborts with a NumericalError naming the step, lr and grad norm.
FitResult fit(PetalModel& model, const std::vector<Sample>& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// checkpoint.ptck, checkpoint_ema.ptck, model.json and loss.jsonl.
void save_run(const std::filesystem::path& dir, const PetalModel& model, const FitResult& result);
// Rebuilds a model from save_run output, with raw or EMA weights.
PetalModel load_model(const std::filesystem::path& dir, bool use_ema = true);

// Options for training straight from a dataset directory.
struct RunOptions {
  std::size_t num_heads = 8;
  int num_classes = 0;      // 0 infers from the annotations
  bool baseline = false;    // global average pooling instead of subject tokens
};

// Loads a dataset directory, trains and writes the run with save_run.
FitResult train_directory(const std::filesystem::path& data_dir, const std::filesystem::path& run_dir,
                          const TrainConfig& cfg, const RunOptions& opts = {}, const EpochCallback& on_epoch = {});
// Detections for every video of a dataset directory from a saved run.
VideoDetections infer_directory(const std::filesystem::path& data_dir, const std::filesystem::path& run_dir,
                                bool use_ema = true, const DecodeConfig& dcfg = {}, const SoftNmsConfig& ncfg = {});

}  // namespace petal
