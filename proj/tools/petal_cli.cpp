// petal: synthetic data, training, inference, evaluation and gradient checks.

#include <cctype>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "petal/dataio.hpp"
#include "petal/errors.hpp"
#include "petal/eval.hpp"
#include "petal/gradsuite.hpp"
#include "petal/synthetic.hpp"
#include "petal/trainer.hpp"

namespace {

using namespace petal;
namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kValidation = 2;
constexpr int kNumerical = 3;

struct InferFlags {
  bool raw = false;
  DecodeConfig decode;
  SoftNmsConfig nms;
};

void add_infer_flags(CLI::App* app, InferFlags& f) {
  app->add_flag("--raw", f.raw, "Use raw weights instead of the EMA weights");
  app->add_option("--score-threshold", f.decode.score_threshold, "Minimum class probability");
  app->add_option("--pre-nms-topk", f.decode.pre_nms_topk, "Candidates kept before Soft-NMS");
  app->add_option("--sigma", f.nms.sigma, "Gaussian Soft-NMS sigma");
  app->add_option("--min-score", f.nms.min_score, "Soft-NMS drop threshold");
  app->add_option("--max-keep", f.nms.max_keep, "Segments kept per video");
}

VideoDetections run_inference(const fs::path& data_dir, const fs::path& run_dir, const InferFlags& f) {
  return infer_directory(data_dir, run_dir, !f.raw, f.decode, f.nms);
}

// Config keys may use struct field names: warmup_epochs and K map to
// --warmup-epochs and --k.
class FieldNameConfig : public CLI::ConfigTOML {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigTOML::from_config(input);
    for (auto& item : items)
      for (auto& ch : item.name) ch = ch == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return items;
  }
};

std::vector<double> parse_thresholds(const std::string& spec) {
  if (spec == "fine") return default_thresholds();
  if (spec == "coarse") return coarse_thresholds();
  std::vector<double> out;
  std::stringstream ss(spec);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      const double t = std::stod(item, &used);
      if (used != item.size() || !(t > 0 && t <= 1)) throw std::invalid_argument(item);
      out.push_back(t);
    } catch (const std::exception&) {
      throw ValidationError("invalid tIoU threshold '" + item + "'");
    }
  }
  if (out.empty()) throw ValidationError("no tIoU thresholds given");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PETAL temporal action localization"};
  app.set_config("--config", "", "TOML/INI file with option values (sections per subcommand)");
  app.config_formatter(std::make_shared<FieldNameConfig>());
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  // synth
  synth::SyntheticSpec sspec;
  fs::path synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a seeded synthetic dataset");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--seed", sspec.seed, "Generator seed");
  synth_cmd->add_option("--videos", sspec.num_videos, "Number of videos");
  synth_cmd->add_option("--classes", sspec.num_classes, "Number of action classes");
  synth_cmd->add_option("--t-min", sspec.t_min, "Minimum snippets per video");
  synth_cmd->add_option("--t-max", sspec.t_max, "Maximum snippets per video");
  synth_cmd->add_option("--k-min", sspec.k_min, "Minimum planted subjects");
  synth_cmd->add_option("--k-max", sspec.k_max, "Maximum planted subjects (<= 4)");
  synth_cmd->add_option("--noise", sspec.noise, "Gaussian noise sigma on every cell");
  synth_cmd->add_option("--confounded", sspec.confounded, "Hold the global average fixed");
  synth_cmd->add_option("--max-segments", sspec.max_segments, "Maximum segments per video");
  synth_cmd->add_option("--min-segment-len", sspec.min_segment_len, "Minimum segment length in snippets");
  synth_cmd->add_option("--coverage-min", sspec.coverage_min, "Minimum fraction of action snippets");
  synth_cmd->add_option("--coverage-max", sspec.coverage_max, "Maximum fraction of action snippets");
  synth_cmd->add_option("--feature-dim", sspec.feature_dim, "Feature channels D");
  synth_cmd->add_option("--grid", sspec.grid, "Feature grid size H = W");

  // train
  TrainConfig tc;
  fs::path train_data, train_out;
  std::size_t num_heads = RunOptions{}.num_heads;
  int num_classes = 0;
  bool baseline = false;
  auto* train_cmd = app.add_subcommand("train", "Train on a dataset directory");
  train_cmd->add_option("--data", train_data, "Dataset directory")->required();
  train_cmd->add_option("--out", train_out, "Run directory for checkpoints and logs")->required();
  train_cmd->add_option("--seed", tc.seed, "Initialization and shuffle seed");
  train_cmd->add_option("--lr,--lr-init", tc.lr_init, "Peak learning rate");
  train_cmd->add_option("--epochs", tc.epochs, "Training epochs");
  train_cmd->add_option("--warmup,--warmup-epochs", tc.warmup_epochs, "Linear warm-up epochs");
  train_cmd->add_option("--batch-size", tc.batch_size, "Videos per optimizer step");
  train_cmd->add_option("--ema-decay", tc.ema_decay, "EMA decay per step");
  train_cmd->add_option("--lambda", tc.lambda, "Regression loss weight");
  train_cmd->add_option("--k", tc.K, "Ranked subjects per snippet");
  train_cmd->add_option("--l1", tc.L1, "SA-SAM layers");
  train_cmd->add_option("--window-size", tc.window_size, "Temporal attention window");
  train_cmd->add_option("--alpha", tc.alpha, "H-TAM down-sampling rate");
  train_cmd->add_option("--pyramid-height", tc.pyramid_height, "Pyramid levels (1 + H-TAM layers)");
  train_cmd->add_option("--strict-eq3", tc.strict_eq3, "Classification terms only inside actions (true/false)");
  train_cmd->add_option("--weight-decay", tc.weight_decay, "Decoupled weight decay");
  train_cmd->add_option("--clip-norm", tc.clip_norm, "Global gradient norm clip, 0 disables");
  train_cmd->add_option("--num-heads", num_heads, "Attention heads");
  train_cmd->add_option("--num-classes", num_classes, "Class count (default: from annotations)");
  train_cmd->add_flag("--baseline", baseline, "Global average pooling instead of subject tokens");

  // infer
  InferFlags infer_flags;
  fs::path infer_data, infer_run, infer_out;
  auto* infer_cmd = app.add_subcommand("infer", "Write detections for a dataset");
  infer_cmd->add_option("--data", infer_data, "Dataset directory")->required();
  infer_cmd->add_option("--run", infer_run, "Run directory from train")->required();
  infer_cmd->add_option("--out", infer_out, "Detections file (JSON lines)")->required();
  add_infer_flags(infer_cmd, infer_flags);

  // eval
  InferFlags eval_flags;
  fs::path eval_data, eval_run, eval_dets, eval_out;
  std::string eval_thresholds = "fine";
  auto* eval_cmd = app.add_subcommand("eval", "Score detections against annotations");
  eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
  auto* run_opt = eval_cmd->add_option("--run", eval_run, "Run directory; detections are computed");
  auto* det_opt = eval_cmd->add_option("--detections", eval_dets, "Detections file");
  run_opt->excludes(det_opt);
  eval_cmd->add_option("--out", eval_out, "Report file (one JSON line)");
  eval_cmd->add_option("--thresholds", eval_thresholds, "fine (0.5:0.05:0.95), coarse (0.3:0.1:0.7) or a list");
  add_infer_flags(eval_cmd, eval_flags);

  // gradcheck
  std::uint64_t gc_seed = 0;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc_cmd->add_option("--seed", gc_seed, "Probe seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    app.exit(e);
    return kValidation;
  }

  try {
    if (*synth_cmd) {
      const auto ds = synth::generate(sspec);
      synth::write_dataset(synth_out, ds);
      std::cout << "wrote " << ds.videos.size() << " videos to " << synth_out.string() << "\n";
    } else if (*train_cmd) {
      RunOptions opts;
      opts.num_heads = num_heads;
      opts.num_classes = num_classes;
      opts.baseline = baseline;
      const auto res = train_directory(train_data, train_out, tc, opts, [](const io::EpochLog& l) {
        std::printf("epoch %4zu  loss %.6f  lr %.3e  grad_norm %.4f\n", l.epoch, l.mean_loss, l.lr, l.grad_norm);
        std::fflush(stdout);
      });
      std::cout << res.steps << " optimizer steps\n";
      std::cout << "saved run to " << train_out.string() << "\n";
    } else if (*infer_cmd) {
      const auto dets = run_inference(infer_data, infer_run, infer_flags);
      io::write_detections(infer_out, dets);
      std::size_t n = 0;
      for (const auto& [_, d] : dets) n += d.size();
      std::cout << "wrote " << n << " detections for " << dets.size() << " videos to " << infer_out.string() << "\n";
    } else if (*eval_cmd) {
      if (eval_run.empty() && eval_dets.empty()) throw ValidationError("eval needs --run or --detections");
      const auto thresholds = parse_thresholds(eval_thresholds);
      VideoGroundTruth gts;
      for (const auto& v : io::load_dataset(eval_data)) gts[v.annotation.id] = v.annotation.segments;
      const auto dets = eval_run.empty() ? io::read_detections(eval_dets) : run_inference(eval_data, eval_run, eval_flags);
      const auto rep = evaluate(dets, gts, thresholds);
      std::cout << io::format_report(rep);
      if (!eval_out.empty()) {
        const std::string line = io::encode_report(rep) + "\n";
        io::write_bytes(eval_out, std::vector<std::uint8_t>(line.begin(), line.end()));
      }
    } else if (*gc_cmd) {
      bool ok = true;
      for (const auto& e : run_gradient_suite(gc_seed)) {
        std::printf("%-22s max_rel_error %.3e  (< %.0e)  %s\n", e.name.c_str(), e.max_rel_error, e.tolerance,
                    e.passed() ? "ok" : "FAIL");
        ok = ok && e.passed();
      }
      return ok ? kOk : kNumerical;
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kValidation;
  } catch (const IoError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
