#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "petal/dataio.hpp"
#include "petal/errors.hpp"
#include "petal/eval.hpp"
#include "petal/gradsuite.hpp"
#include "petal/heads.hpp"
#include "petal/inference.hpp"
#include "petal/synthetic.hpp"
#include "petal/trainer.hpp"

namespace py = pybind11;
using namespace petal;

namespace {

py::dict report_dict(const EvalReport& rep) {
  py::dict per_class;
  for (const auto& [key, ap] : rep.per_class_ap) per_class[py::make_tuple(key.first, key.second)] = ap;
  py::dict d;
  d["per_threshold_map"] = rep.per_threshold_map;
  d["average_map"] = rep.average_map;
  d["per_class_ap"] = per_class;
  return d;
}

}  // namespace

PYBIND11_MODULE(_petal, m) {
  m.doc() = "Subject-aware temporal action localization";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<ActionSegment>(m, "ActionSegment")
      .def(py::init<int, double, double, double>(), py::arg("class_id"), py::arg("score"), py::arg("start"), py::arg("end"))
      .def_readwrite("class_id", &ActionSegment::class_id)
      .def_readwrite("score", &ActionSegment::score)
      .def_readwrite("start", &ActionSegment::start)
      .def_readwrite("end", &ActionSegment::end)
      .def("__repr__", [](const ActionSegment& s) {
        return "ActionSegment(class_id=" + std::to_string(s.class_id) + ", score=" + std::to_string(s.score) +
               ", start=" + std::to_string(s.start) + ", end=" + std::to_string(s.end) + ")";
      });

  py::class_<GroundTruthSegment>(m, "GroundTruthSegment")
      .def(py::init<int, double, double>(), py::arg("class_id"), py::arg("start"), py::arg("end"))
      .def_readwrite("class_id", &GroundTruthSegment::class_id)
      .def_readwrite("start", &GroundTruthSegment::start)
      .def_readwrite("end", &GroundTruthSegment::end);

  m.def("tiou", py::overload_cast<double, double, double, double>(&tiou), py::arg("a_start"), py::arg("a_end"),
        py::arg("b_start"), py::arg("b_end"));
  m.def("giou_loss_1d", &giou_loss_1d, py::arg("pred_start"), py::arg("pred_end"), py::arg("tgt_start"), py::arg("tgt_end"));
  m.def("focal_term", &focal_term, py::arg("logit"), py::arg("positive"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0);
  m.def("lr_schedule", &lr_schedule, py::arg("step"), py::arg("total_steps"), py::arg("warmup_steps"), py::arg("lr_init"));

  m.def("soft_nms", &soft_nms, py::arg("segments"), py::arg("sigma") = 0.5, py::arg("min_score") = 0.001,
        py::arg("per_class") = true);
  m.def("average_precision", &average_precision, py::arg("detections"), py::arg("ground_truth"), py::arg("threshold"));
  m.def(
      "evaluate",
      [](const VideoDetections& dets, const VideoGroundTruth& gts, const std::vector<double>& thresholds) {
        return report_dict(evaluate(dets, gts, thresholds));
      },
      py::arg("detections"), py::arg("ground_truth"), py::arg("thresholds") = default_thresholds());
  m.def("default_thresholds", &default_thresholds);
  m.def("coarse_thresholds", &coarse_thresholds);

  py::class_<synth::SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_readwrite("seed", &synth::SyntheticSpec::seed)
      .def_readwrite("num_videos", &synth::SyntheticSpec::num_videos)
      .def_readwrite("num_classes", &synth::SyntheticSpec::num_classes)
      .def_readwrite("t_min", &synth::SyntheticSpec::t_min)
      .def_readwrite("t_max", &synth::SyntheticSpec::t_max)
      .def_readwrite("k_min", &synth::SyntheticSpec::k_min)
      .def_readwrite("k_max", &synth::SyntheticSpec::k_max)
      .def_readwrite("noise", &synth::SyntheticSpec::noise)
      .def_readwrite("confounded", &synth::SyntheticSpec::confounded)
      .def_readwrite("max_segments", &synth::SyntheticSpec::max_segments)
      .def_readwrite("min_segment_len", &synth::SyntheticSpec::min_segment_len)
      .def_readwrite("feature_dim", &synth::SyntheticSpec::feature_dim)
      .def_readwrite("grid", &synth::SyntheticSpec::grid);

  m.def(
      "synth",
      [](const std::filesystem::path& out, const synth::SyntheticSpec& spec) {
        const auto ds = synth::generate(spec);
        synth::write_dataset(out, ds);
        return ds.videos.size();
      },
      py::arg("out"), py::arg("spec") = synth::SyntheticSpec{}, "Write a synthetic dataset directory; returns the video count.");

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lr_init", &TrainConfig::lr_init)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("warmup_epochs", &TrainConfig::warmup_epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("ema_decay", &TrainConfig::ema_decay)
      .def_readwrite("lambda_", &TrainConfig::lambda)
      .def_readwrite("K", &TrainConfig::K)
      .def_readwrite("L1", &TrainConfig::L1)
      .def_readwrite("window_size", &TrainConfig::window_size)
      .def_readwrite("alpha", &TrainConfig::alpha)
      .def_readwrite("pyramid_height", &TrainConfig::pyramid_height)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("strict_eq3", &TrainConfig::strict_eq3)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("clip_norm", &TrainConfig::clip_norm)
      .def("validate", &TrainConfig::validate);

  m.def(
      "train",
      [](const std::filesystem::path& data, const std::filesystem::path& out, const TrainConfig& cfg, bool baseline,
         std::size_t num_heads, int num_classes) {
        RunOptions opts;
        opts.baseline = baseline;
        opts.num_heads = num_heads;
        opts.num_classes = num_classes;
        FitResult res;
        {
          py::gil_scoped_release release;
          res = train_directory(data, out, cfg, opts);
        }
        py::list log;
        for (const auto& e : res.log)
          log.append(py::dict(py::arg("epoch") = e.epoch, py::arg("steps") = e.steps, py::arg("mean_loss") = e.mean_loss,
                              py::arg("lr") = e.lr, py::arg("grad_norm") = e.grad_norm));
        return log;
      },
      py::arg("data"), py::arg("out"), py::arg("config") = TrainConfig{}, py::arg("baseline") = false,
      py::arg("num_heads") = RunOptions{}.num_heads, py::arg("num_classes") = 0,
      "Train on a dataset directory and save the run; returns the per-epoch log.");

  m.def(
      "infer",
      [](const std::filesystem::path& data, const std::filesystem::path& run, bool use_ema) {
        py::gil_scoped_release release;
        return infer_directory(data, run, use_ema);
      },
      py::arg("data"), py::arg("run"), py::arg("use_ema") = true, "Detections per video id.");

  m.def(
      "ground_truth",
      [](const std::filesystem::path& data) {
        VideoGroundTruth gts;
        for (const auto& v : io::load_dataset(data)) gts[v.annotation.id] = v.annotation.segments;
        return gts;
      },
      py::arg("data"));

  m.def("write_detections", &io::write_detections, py::arg("path"), py::arg("detections"));
  m.def("read_detections", &io::read_detections, py::arg("path"));

  m.def(
      "gradient_suite",
      [](std::uint64_t seed) {
        py::list out;
        for (const auto& e : run_gradient_suite(seed))
          out.append(py::dict(py::arg("name") = e.name, py::arg("max_rel_error") = e.max_rel_error,
                              py::arg("tolerance") = e.tolerance, py::arg("coords") = e.coords, py::arg("passed") = e.passed()));
        return out;
      },
      py::arg("seed") = 0);
}
