#include "petal/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "petal/errors.hpp"
#include "petal/rng.hpp"

namespace petal::synth {

void SyntheticSpec::validate() const {
  if (num_videos == 0 || num_classes <= 0) throw ValidationError("synthetic: need at least one video and class");
  if (t_min < 2 || t_max < t_min) throw ValidationError("synthetic: need 2 <= t_min <= t_max");
  if (k_min == 0 || k_max < k_min || k_max > 4) throw ValidationError("synthetic: need 1 <= k_min <= k_max <= 4");
  if (min_segment_len < 2) throw ValidationError("synthetic: segments need at least two snippets");
  if (max_segments == 0 || (min_segment_len + 2) * max_segments > t_min + 2)
    throw ValidationError("synthetic: too many segments for t_min");
  if (!(coverage_min > 0) || coverage_max < coverage_min || coverage_max > 1)
    throw ValidationError("synthetic: coverage range must lie in (0, 1]");
  if (grid < 6 || grid % 2 != 0 || feature_dim == 0) throw ValidationError("synthetic: grid must be even and >= 6");
  if (!(noise >= 0) || !(frame_size > 0) || !(fps > 0) || snippet_stride == 0)
    throw ValidationError("synthetic: invalid noise, frame size or timing");
}

namespace {

std::vector<float> gaussian_vec(Rng& rng, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

// Splits `total` into `parts` nonnegative integers.
std::vector<std::size_t> split(Rng& rng, std::size_t total, std::size_t parts) {
  std::vector<std::size_t> cuts{0, total};
  for (std::size_t i = 1; i < parts; ++i) cuts.push_back(pick(rng, 0, total));
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i < cuts.size(); ++i) out.push_back(cuts[i] - cuts[i - 1]);
  return out;
}

struct Box {
  std::size_t r0, c0, r1, c1;  // cell rows/cols, end exclusive
};

Video make_video(const SyntheticSpec& s, const Dataset& ds, Rng& rng, std::size_t index) {
  const std::size_t G = s.grid, D = s.feature_dim, N = G * G;
  const std::size_t T = pick(rng, s.t_min, s.t_max);
  const double unit = static_cast<double>(s.snippet_stride) / s.fps;
  const double cell_px = s.frame_size / static_cast<double>(G);

  // Subjects sit in distinct quadrants so their cells never overlap.
  std::vector<std::size_t> quads{0, 1, 2, 3};
  for (std::size_t i = 3; i > 0; --i) std::swap(quads[i], quads[pick(rng, 0, i)]);
  const std::size_t K = pick(rng, s.k_min, s.k_max);
  const std::size_t half = G / 2;
  std::vector<Box> boxes;
  std::vector<bool> is_subject(N, false);
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t h = pick(rng, 2, std::min<std::size_t>(3, half)), w = pick(rng, 2, std::min<std::size_t>(3, half));
    const std::size_t r0 = (quads[k] / 2) * half + pick(rng, 0, half - h);
    const std::size_t c0 = (quads[k] % 2) * half + pick(rng, 0, half - w);
    boxes.push_back({r0, c0, r0 + h, c0 + w});
    for (std::size_t r = r0; r < r0 + h; ++r)
      for (std::size_t c = c0; c < c0 + w; ++c) is_subject[r * G + c] = true;
  }
  std::vector<double> conf;
  for (std::size_t k = 0; k < K; ++k) conf.push_back(std::round(rng.uniform(0.6, 0.99) * 1000.0) / 1000.0);

  // Segments as inclusive snippet ranges of at least min_segment_len snippets.
  const std::size_t ml = s.min_segment_len;
  const std::size_t nseg = pick(rng, 1, s.max_segments);
  const double cov = rng.uniform(s.coverage_min, s.coverage_max);
  const auto active = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(cov * static_cast<double>(T))),
                                               ml * nseg, T - 2 * (nseg - 1));
  auto lengths = split(rng, active - ml * nseg, nseg);
  for (auto& l : lengths) l += ml;
  // Interior gaps of at least two idle snippets keep same-class neighbours apart.
  auto gaps = split(rng, T - active - 2 * (nseg - 1), nseg + 1);
  for (std::size_t i = 1; i < nseg; ++i) gaps[i] += 2;
  std::vector<int> label(T, -1);
  io::AnnotationRecord ann;
  char id[32];
  std::snprintf(id, sizeof id, "video_%04zu", index);
  ann.id = id;
  ann.fps = s.fps;
  ann.frame_width = ann.frame_height = s.frame_size;
  ann.snippet_stride = s.snippet_stride;
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < nseg; ++i) {
    cursor += gaps[i];
    const int c = static_cast<int>(pick(rng, 0, static_cast<std::size_t>(s.num_classes - 1)));
    for (std::size_t t = cursor; t < cursor + lengths[i]; ++t) label[t] = c;
    ann.segments.push_back({c, static_cast<double>(cursor) * unit, static_cast<double>(cursor + lengths[i] - 1) * unit});
    cursor += lengths[i];
  }

  Video v;
  for (std::size_t i = 0; i < N; ++i)
    if (is_subject[i]) v.subject_cells.push_back(i);
  const std::size_t n_sub = v.subject_cells.size(), n_bg = N - n_sub;
  v.features.T = static_cast<std::uint32_t>(T);
  v.features.H = v.features.W = static_cast<std::uint32_t>(G);
  v.features.D = static_cast<std::uint32_t>(D);
  v.features.payload.resize(T * N * D);
  std::vector<double> bg(N * D);
  for (std::size_t t = 0; t < T; ++t) {
    const auto& subj = label[t] >= 0 ? ds.class_signals[static_cast<std::size_t>(label[t])] : ds.idle_signal;
    // Zero-sum distractor over background cells.
    std::vector<double> mean(D, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      if (is_subject[i]) continue;
      for (std::size_t d = 0; d < D; ++d) {
        bg[i * D + d] = rng.normal();
        mean[d] += bg[i * D + d];
      }
    }
    for (auto& m : mean) m /= static_cast<double>(n_bg);
    float* out = v.features.payload.data() + t * N * D;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t d = 0; d < D; ++d) {
        double x;
        if (is_subject[i]) {
          x = subj[d];
        } else {
          const double base = s.confounded ? (static_cast<double>(N) * ds.global_mean[d] - static_cast<double>(n_sub) * subj[d]) /
                                                 static_cast<double>(n_bg)
                                           : ds.global_mean[d];
          x = base + bg[i * D + d] - mean[d];
        }
        if (s.noise > 0) x += s.noise * rng.normal();
        out[i * D + d] = static_cast<float>(x);
      }
    std::vector<SubjectBox> snip;
    for (std::size_t k = 0; k < K; ++k) {
      const auto& b = boxes[k];
      snip.push_back({static_cast<double>(b.c0) * cell_px, static_cast<double>(b.r0) * cell_px,
                      static_cast<double>(b.c1) * cell_px, static_cast<double>(b.r1) * cell_px, conf[k]});
    }
    ann.boxes.push_back(std::move(snip));
  }
  ann.validate(s.num_classes);
  v.annotation = std::move(ann);
  return v;
}

}  // namespace

Dataset generate(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Dataset ds;
  for (int c = 0; c < spec.num_classes; ++c) ds.class_signals.push_back(gaussian_vec(rng, spec.feature_dim));
  ds.idle_signal = gaussian_vec(rng, spec.feature_dim);
  ds.global_mean = gaussian_vec(rng, spec.feature_dim);
  for (std::size_t i = 0; i < spec.num_videos; ++i) ds.videos.push_back(make_video(spec, ds, rng, i));
  return ds;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "features", ec);
  if (ec) throw IoError("cannot create " + (dir / "features").string() + ": " + ec.message());
  std::vector<io::AnnotationRecord> recs;
  for (const auto& v : ds.videos) {
    io::write_features(dir / "features" / (v.annotation.id + ".ptfv"), v.features);
    recs.push_back(v.annotation);
  }
  io::write_annotations(dir / "annotations.jsonl", recs);
}

}  // namespace petal::synth
