#include "petal/gradsuite.hpp"

#include <functional>

#include "petal/gradcheck.hpp"
#include "petal/model.hpp"
#include "petal/rng.hpp"
#include "petal/synthetic.hpp"

namespace petal {

namespace {

constexpr double kPrimitiveTol = 1e-6;
constexpr double kModelTol = 1e-4;
constexpr int kProbes = 5;

Tensor gaussian(const Shape& s, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor(s, std::move(v));
}

using OpFn = std::function<Var(Graph&, const std::vector<Var>&)>;

// Checks sum(c * op(inputs)) for random inputs and random weights c.
SuiteEntry probe(const std::string& name, const std::vector<Shape>& shapes, const OpFn& op, Rng& rng) {
  SuiteEntry e{name, 0.0, kPrimitiveTol, 0};
  for (int k = 0; k < kProbes; ++k) {
    std::vector<Parameter> ps;
    ps.reserve(shapes.size());
    for (std::size_t i = 0; i < shapes.size(); ++i) ps.emplace_back("in" + std::to_string(i), gaussian(shapes[i], rng));
    Tensor c;
    {
      Graph g;
      std::vector<Var> in;
      for (auto& p : ps) in.push_back(g.constant(p.value));
      c = gaussian(g.value(op(g, in)).shape(), rng);
    }
    std::vector<Parameter*> ptrs;
    for (auto& p : ps) ptrs.push_back(&p);
    const auto r = grad_check(
        [&](Graph& g) {
          std::vector<Var> in;
          for (auto& p : ps) in.push_back(g.param(p));
          return ops::sum(g, ops::mul(g, op(g, in), g.constant(c)));
        },
        ptrs, 1e-5);
    e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
    e.coords += r.coords_checked;
  }
  return e;
}

SuiteEntry end_to_end(std::uint64_t seed) {
  ModelConfig m;
  m.feature_dim = 8;
  m.num_heads = 2;
  m.K = 3;
  m.L1 = 2;
  m.pyramid_height = 3;
  synth::SyntheticSpec spec;
  spec.seed = seed;
  spec.num_videos = 1;
  spec.feature_dim = 8;
  spec.t_min = spec.t_max = 2;
  spec.max_segments = 1;
  spec.min_segment_len = 2;
  spec.coverage_min = spec.coverage_max = 1.0;
  spec.k_min = spec.k_max = 3;
  spec.noise = 0.3;
  const auto ds = synth::generate(spec);
  const Sample s = make_sample({ds.videos[0].annotation, ds.videos[0].features}, m);
  PetalModel model(m, seed + 1);
  Rng rng(seed + 2);
  for (auto* p : model.params().all())
    for (auto& v : p->value.mutable_data()) v += 0.05 * rng.normal();
  const auto params = model.params().all();
  const auto r = grad_check([&](Graph& g) { return model.loss(g, s, LossConfig{}); }, params, 1e-5);
  return {"end_to_end_loss", r.max_rel_error, kModelTol, r.coords_checked};
}

}  // namespace

std::vector<SuiteEntry> run_gradient_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SuiteEntry> out;
  auto add = [&](const std::string& n, const std::vector<Shape>& s, const OpFn& f) { out.push_back(probe(n, s, f, rng)); };

  add("linear", {{5, 4}, {4, 3}, {3}}, [](Graph& g, const auto& x) { return ops::linear(g, x[0], x[1], x[2]); });
  add("matmul", {{3, 4}, {4, 2}}, [](Graph& g, const auto& x) { return ops::matmul(g, x[0], x[1]); });
  add("add", {{3, 4}, {3, 4}}, [](Graph& g, const auto& x) { return ops::add(g, x[0], x[1]); });
  add("scale", {{3, 4}}, [](Graph& g, const auto& x) { return ops::scale(g, x[0], -1.7); });
  add("mul", {{3, 4}, {3, 4}}, [](Graph& g, const auto& x) { return ops::mul(g, x[0], x[1]); });
  add("relu", {{6, 4}}, [](Graph& g, const auto& x) { return ops::relu(g, x[0]); });
  add("softmax", {{4, 5}}, [](Graph& g, const auto& x) { return ops::softmax(g, x[0]); });
  add("softmax_masked", {{2, 3}}, [](Graph& g, const auto& x) {
    return ops::softmax(g, x[0], {true, false, true, false, true, true});
  });
  add("layer_norm", {{5, 4}, {4}, {4}}, [](Graph& g, const auto& x) { return ops::layer_norm(g, x[0], x[1], x[2], 1e-5); });
  add("conv1d_same_stride2", {{7, 3}, {3, 3, 2}, {2}}, [](Graph& g, const auto& x) {
    return ops::conv1d(g, x[0], x[1], x[2], 2, ops::Padding::Same);
  });
  add("conv1d_valid", {{6, 3}, {3, 3, 2}, {2}}, [](Graph& g, const auto& x) {
    return ops::conv1d(g, x[0], x[1], x[2], 1, ops::Padding::Valid);
  });
  add("depthwise_conv1d", {{7, 3}, {2, 3}, {3}}, [](Graph& g, const auto& x) {
    return ops::depthwise_conv1d(g, x[0], x[1], x[2], 2);
  });
  add("attention", {{5, 4}, {5, 4}, {5, 4}}, [](Graph& g, const auto& x) {
    ops::Mask allowed(25, true), rows(5, true);
    allowed[1] = allowed[7] = allowed[13] = false;
    rows[4] = false;
    return ops::attention(g, x[0], x[1], x[2], allowed, rows, 2);
  });
  add("mask_rows", {{4, 3}}, [](Graph& g, const auto& x) { return ops::mask_rows(g, x[0], {true, false, true, true}); });
  add("select_row", {{4, 3}}, [](Graph& g, const auto& x) { return ops::select_row(g, x[0], 2); });
  add("stack_rows", {{3}, {3}}, [](Graph& g, const auto& x) { return ops::stack_rows(g, {x[1], x[0], x[1]}); });
  add("mean_rows", {{4, 3}}, [](Graph& g, const auto& x) { return ops::mean_rows(g, x[0]); });
  add("sum", {{4, 3}}, [](Graph& g, const auto& x) { return ops::sum(g, x[0]); });
  add("roi_align", {{16, 3}}, [](Graph& g, const auto& x) {
    VideoMeta m;
    m.frame_width = m.frame_height = 64;
    m.fps = 1;
    m.snippet_stride = 1;
    m.num_snippets = 1;
    m.feature_height = m.feature_width = 4;
    m.feature_dim = 3;
    return roi_align(g, x[0], SubjectBox{5, 9, 41, 30, 1.0}, m, RoiBins{3, 3});
  });

  const LevelTargets lt = assign_targets({{1, 1.0, 4.0}, {0, 5.0, 6.0}}, {{8, 1, 8}}, 1.0, 1, 2).levels[0];
  add("focal_loss", {{8, 2}}, [lt](Graph& g, const auto& x) { return focal_loss(g, x[0], lt, true); });
  add("giou_loss", {{8, 2}}, [lt](Graph& g, const auto& x) {
    // Offsets kept positive, away from the regression kinks.
    return giou_loss(g, ops::add(g, ops::mul(g, x[0], x[0]), g.constant(Tensor::full({8, 2}, 0.25))), lt);
  });
  out.push_back(end_to_end(seed));
  return out;
}

}  // namespace petal
