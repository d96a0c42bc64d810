#include "petal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "petal/errors.hpp"
#include "petal/rng.hpp"

namespace petal {

void TrainConfig::validate() const {
  if (!(lr_init >= 0) || !std::isfinite(lr_init)) throw ValidationError("train: lr_init must be finite and >= 0");
  if (epochs == 0 || batch_size == 0) throw ValidationError("train: epochs and batch_size must be positive");
  if (warmup_epochs >= epochs) throw ValidationError("train: warmup_epochs must be smaller than epochs");
  if (!(ema_decay >= 0 && ema_decay <= 1)) throw ValidationError("train: ema_decay must lie in [0, 1]");
  if (!(lambda >= 0)) throw ValidationError("train: lambda must be >= 0");
  if (K == 0 || window_size == 0 || alpha == 0 || pyramid_height == 0)
    throw ValidationError("train: K, window_size, alpha and pyramid_height must be positive");
  if (!(weight_decay >= 0) || !(clip_norm >= 0)) throw ValidationError("train: weight_decay and clip_norm must be >= 0");
}

void TrainConfig::apply(ModelConfig& m) const {
  m.K = K;
  m.L1 = L1;
  m.window_size = window_size;
  m.alpha = alpha;
  m.pyramid_height = pyramid_height;
}

LossConfig TrainConfig::loss() const {
  LossConfig l;
  l.lambda = lambda;
  l.strict_eq3 = strict_eq3;
  return l;
}

double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double lr_init) {
  if (step > total_steps) throw std::invalid_argument("lr_schedule: step beyond total_steps");
  if (step < warmup_steps) return lr_init * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps == warmup_steps) return lr_init;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return lr_init * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<Tensor> parameter_values(const ParamStore& store) {
  std::vector<Tensor> out;
  for (const auto* p : store.all()) out.push_back(p->value);
  return out;
}

void ema_update(std::vector<Tensor>& ema, std::span<const Tensor> params, double decay) {
  if (ema.size() != params.size()) throw DimensionError("ema_update: parameter count mismatch");
  for (std::size_t i = 0; i < ema.size(); ++i) {
    if (ema[i].shape() != params[i].shape()) throw DimensionError("ema_update: shape mismatch at parameter " + std::to_string(i));
    auto e = ema[i].mutable_data();
    const auto p = params[i].data();
    for (std::size_t j = 0; j < e.size(); ++j) e[j] = decay * e[j] + (1.0 - decay) * p[j];
  }
}

void ema_update(std::vector<Tensor>& ema, const ParamStore& store, double decay) {
  const auto vals = parameter_values(store);
  ema_update(ema, vals, decay);
}

void Adam::step(std::span<Parameter* const> params, double lr) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw DimensionError("adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->value.mutable_data();
    const auto gr = params[i]->grad.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gr[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gr[j] * gr[j];
      const double mh = m[j] / c1, vh = v[j] / c2;
      w[j] -= lr * (mh / (std::sqrt(vh) + eps_) + wd_ * w[j]);
    }
  }
}

double global_grad_norm(std::span<Parameter* const> params) {
  double s = 0.0;
  for (const auto* p : params)
    for (double g : p->grad.data()) s += g * g;
  return std::sqrt(s);
}

namespace {

[[noreturn]] void numerical_abort(const std::string& what, std::size_t step, double lr, double norm,
                                  std::span<Parameter* const> params) {
  std::ostringstream os;
  os << what << " at step " << step << " (lr " << lr << ", global grad norm " << norm << ")";
  for (const auto* p : params) {
    double s = 0.0;
    for (double g : p->grad.data()) s += g * g;
    if (!std::isfinite(s)) os << "; non-finite grad in " << p->name;
  }
  throw TrainingAbort(os.str());
}

}  // namespace

FitResult fit(PetalModel& model, const std::vector<Sample>& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.empty()) throw ValidationError("fit: empty training set");
  auto& store = model.params();
  const auto params = store.all();
  const std::size_t per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs, warmup = per_epoch * cfg.warmup_epochs;
  const LossConfig lcfg = cfg.loss();
  Adam adam(0.9, 0.999, 1e-8, cfg.weight_decay);
  Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  FitResult res;
  res.ema = parameter_values(store);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
    io::EpochLog log;
    log.epoch = epoch + 1;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(lo + cfg.batch_size, data.size());
      const double lr = lr_schedule(res.steps + 1, total, warmup, cfg.lr_init);
      store.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        const std::string& id = data[order[i]].id;
        try {
          Graph g;
          const Var l = model.loss(g, data[order[i]], lcfg);
          const double v = g.value(l)[0];
          if (!std::isfinite(v)) numerical_abort("non-finite loss on '" + id + "'", res.steps + 1, lr, 0.0, params);
          batch_loss += v;
          g.backward(ops::scale(g, l, 1.0 / static_cast<double>(hi - lo)));
        } catch (const TrainingAbort&) {
          throw;
        } catch (const NumericalError& e) {
          numerical_abort(std::string(e.what()) + " on '" + id + "'", res.steps + 1, lr, global_grad_norm(params), params);
        }
      }
      batch_loss /= static_cast<double>(hi - lo);
      const double norm = global_grad_norm(params);
      if (!std::isfinite(norm)) numerical_abort("non-finite gradient", res.steps + 1, lr, norm, params);
      if (cfg.clip_norm > 0 && norm > cfg.clip_norm) {
        const double s = cfg.clip_norm / norm;
        for (auto* p : params)
          for (double& gv : p->grad.mutable_data()) gv *= s;
      }
      adam.step(params, lr);
      ++res.steps;
      ema_update(res.ema, store, cfg.ema_decay);
      log.mean_loss += batch_loss;
      log.grad_norm += norm;
      log.lr = lr;
      ++log.steps;
    }
    log.mean_loss /= static_cast<double>(log.steps);
    log.grad_norm /= static_cast<double>(log.steps);
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return res;
}

void save_run(const std::filesystem::path& dir, const PetalModel& model, const FitResult& result) {
  io::write_checkpoint(dir / "checkpoint.ptck", io::snapshot(model.params()));
  io::write_checkpoint(dir / "checkpoint_ema.ptck", io::snapshot(model.params(), result.ema));
  const std::string cfg = encode_model_config(model.config()) + "\n";
  io::write_bytes(dir / "model.json", std::vector<std::uint8_t>(cfg.begin(), cfg.end()));
  io::write_loss_log(dir / "loss.jsonl", result.log);
}

PetalModel load_model(const std::filesystem::path& dir, bool use_ema) {
  const auto bytes = io::read_bytes(dir / "model.json");
  PetalModel m(decode_model_config(std::string(bytes.begin(), bytes.end())), 0);
  io::restore(io::read_checkpoint(dir / (use_ema ? "checkpoint_ema.ptck" : "checkpoint.ptck")), m.params());
  return m;
}

FitResult train_directory(const std::filesystem::path& data_dir, const std::filesystem::path& run_dir,
                          const TrainConfig& cfg, const RunOptions& opts, const EpochCallback& on_epoch) {
  cfg.validate();
  const auto videos = io::load_dataset(data_dir);
  if (videos.empty()) throw ValidationError("no videos in " + data_dir.string());
  int classes = opts.num_classes;
  if (classes <= 0) {
    for (const auto& v : videos)
      for (const auto& s : v.annotation.segments) classes = std::max(classes, s.class_id + 1);
    classes = std::max(classes, 1);
  }
  ModelConfig mc;
  mc.feature_dim = videos.front().features.D;
  mc.num_classes = classes;
  mc.num_heads = opts.num_heads;
  mc.subject_tokens = !opts.baseline;
  cfg.apply(mc);
  std::vector<Sample> data;
  for (const auto& v : videos) data.push_back(make_sample(v, mc));
  PetalModel model(mc, cfg.seed);
  auto result = fit(model, data, cfg, on_epoch);
  save_run(run_dir, model, result);
  return result;
}

VideoDetections infer_directory(const std::filesystem::path& data_dir, const std::filesystem::path& run_dir, bool use_ema,
                                const DecodeConfig& dcfg, const SoftNmsConfig& ncfg) {
  const PetalModel model = load_model(run_dir, use_ema);
  VideoDetections out;
  for (const auto& v : io::load_dataset(data_dir)) out[v.annotation.id] = model.predict(make_sample(v, model.config()), dcfg, ncfg);
  return out;
}

}  // namespace petal
