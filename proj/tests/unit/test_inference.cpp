#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "petal/inference.hpp"
#include "test_util.hpp"

using namespace petal;
using petal::testing::random_tensor;

namespace {

VideoMeta meta_with(std::size_t T, double fps = 1.0, std::size_t stride = 1) {
  VideoMeta m;
  m.frame_width = m.frame_height = 64;
  m.fps = fps;
  m.snippet_stride = stride;
  m.num_snippets = T;
  m.feature_height = m.feature_width = 2;
  m.feature_dim = 4;
  return m;
}

LevelPrediction level(std::size_t T, std::size_t C, std::size_t stride, double logit = -50.0) {
  return {Tensor::full({T, C}, logit), Tensor({T, 2}), stride, T};
}

bool same(const ActionSegment& a, const ActionSegment& b, double tol = 1e-9) {
  return a.class_id == b.class_id && std::abs(a.score - b.score) <= tol && a.start == b.start && a.end == b.end;
}

// Straightforward restatement: repeatedly rescan, pop the best, decay.
std::vector<ActionSegment> brute_soft_nms(std::vector<ActionSegment> segs, double sigma, double thr, bool per_class) {
  std::vector<ActionSegment> out;
  std::vector<bool> alive(segs.size());
  for (std::size_t i = 0; i < segs.size(); ++i) alive[i] = segs[i].score >= thr;
  for (;;) {
    int best = -1;
    for (std::size_t i = 0; i < segs.size(); ++i) {
      if (!alive[i]) continue;
      if (best < 0) {
        best = static_cast<int>(i);
        continue;
      }
      const auto& a = segs[i];
      const auto& b = segs[static_cast<std::size_t>(best)];
      const bool better = a.score > b.score || (a.score == b.score && a.start < b.start) ||
                          (a.score == b.score && a.start == b.start && a.class_id < b.class_id);
      if (better) best = static_cast<int>(i);
    }
    if (best < 0) break;
    const auto sel = segs[static_cast<std::size_t>(best)];
    alive[static_cast<std::size_t>(best)] = false;
    out.push_back(sel);
    for (std::size_t i = 0; i < segs.size(); ++i) {
      if (!alive[i] || (per_class && segs[i].class_id != sel.class_id)) continue;
      const double inter = std::max(0.0, std::min(segs[i].end, sel.end) - std::max(segs[i].start, sel.start));
      const double o = inter / ((segs[i].end - segs[i].start) + (sel.end - sel.start) - inter);
      segs[i].score *= std::exp(-o * o / sigma);
      if (segs[i].score < thr) alive[i] = false;
    }
  }
  return out;
}

std::vector<ActionSegment> random_segments(Rng& rng, std::size_t n, int classes) {
  std::vector<ActionSegment> s;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::round(rng.uniform(0.0, 20.0));
    s.push_back({static_cast<int>(rng.uniform_int(0, classes - 1)), std::round(rng.uniform(0.0, 1.0) * 20) / 20, a,
                 a + std::round(rng.uniform(1.0, 8.0))});
  }
  return s;
}

}  // namespace

TEST_CASE("decode: substitution example") {
  auto lvl = level(16, 2, 1);
  lvl.logits.at(10, 1) = 3.0;
  lvl.offsets.at(10, 0) = 2.0;
  lvl.offsets.at(10, 1) = 3.0;
  const auto segs = decode({lvl}, meta_with(16));
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].class_id == 1);
  CHECK(segs[0].start == doctest::Approx(8.0));
  CHECK(segs[0].end == doctest::Approx(13.0));
  CHECK(segs[0].score == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))));
}

TEST_CASE("decode: low scores give nothing") {
  CHECK(decode({level(8, 3, 1), level(4, 3, 2)}, meta_with(8)).empty());
}

TEST_CASE("decode: clamps to the video and drops empty segments") {
  auto lvl = level(8, 1, 2, 5.0);
  for (std::size_t t = 0; t < 8; ++t) {
    lvl.offsets.at(t, 0) = 3.0;
    lvl.offsets.at(t, 1) = 3.0;
  }
  lvl.offsets.at(7, 0) = 0.0;
  lvl.offsets.at(7, 1) = 0.0;
  // 8 snippets, 0.5 s each: duration 4 s; level unit 1 s.
  const auto segs = decode({lvl}, meta_with(8, 2.0, 1));
  CHECK(segs.size() == 7);
  for (const auto& s : segs) {
    CHECK(s.start >= 0.0);
    CHECK(s.end <= 4.0);
    CHECK(s.start < s.end);
  }
}

TEST_CASE("decode: matches exhaustive enumeration") {
  Rng rng(21);
  const auto meta = meta_with(16, 3.0, 2);
  std::vector<LevelPrediction> levels;
  for (std::size_t stride : {1u, 2u, 4u}) {
    const std::size_t T = 16 / stride;
    LevelPrediction l{random_tensor({T, 3}, rng, 4.0), Tensor({T, 2}), stride, T - (stride == 1 ? 2 : 0)};
    for (auto& v : l.offsets.mutable_data()) v = rng.uniform(0.0, 4.0);
    levels.push_back(std::move(l));
  }
  DecodeConfig cfg;
  cfg.score_threshold = 0.2;
  cfg.pre_nms_topk = 25;
  std::vector<ActionSegment> all;
  const double duration = 16 * 2.0 / 3.0;
  for (const auto& l : levels) {
    const double u = static_cast<double>(l.stride) * 2.0 / 3.0;
    for (std::size_t t = 0; t < l.valid_len; ++t)
      for (int c = 0; c < 3; ++c) {
        const double p = 1.0 / (1.0 + std::exp(-l.logits.at(t, static_cast<std::size_t>(c))));
        const double s = std::clamp((static_cast<double>(t) - l.offsets.at(t, 0)) * u, 0.0, duration);
        const double e = std::clamp((static_cast<double>(t) + l.offsets.at(t, 1)) * u, 0.0, duration);
        if (p > 0.2 && e > s) all.push_back({c, p, s, e});
      }
  }
  std::sort(all.begin(), all.end(), [](const ActionSegment& a, const ActionSegment& b) { return a.score > b.score; });
  all.resize(25);
  const auto got = decode(levels, meta, cfg);
  REQUIRE(got.size() == 25);
  for (std::size_t i = 0; i < 25; ++i) CHECK(same(got[i], all[i], 1e-12));
}

TEST_CASE("decode: perfect offsets reproduce assigned segments") {
  const std::vector<GroundTruthSegment> gts = {{0, 2.0, 9.0}, {1, 12.0, 15.0}};
  const auto meta = meta_with(16, 2.0, 2);  // 1 s per snippet
  const std::vector<LevelShape> shapes = {{16, 1, 16}, {8, 2, 8}, {4, 4, 4}};
  const auto tm = assign_targets(gts, shapes, meta.fps, meta.snippet_stride, 2);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& lt = tm.levels[l];
    for (std::size_t t = 0; t < shapes[l].length; ++t) {
      if (!lt.inside[t]) continue;
      LevelPrediction p = level(shapes[l].length, 2, shapes[l].stride);
      p.logits.at(t, static_cast<std::size_t>(lt.class_target[t])) = 10.0;
      p.offsets.at(t, 0) = lt.d_start[t];
      p.offsets.at(t, 1) = lt.d_end[t];
      const auto segs = decode({p}, meta);
      REQUIRE(segs.size() == 1);
      const auto& g = gts[static_cast<std::size_t>(lt.class_target[t])];
      const double quantum = static_cast<double>(shapes[l].stride);
      CHECK(std::abs(segs[0].start - g.start) <= quantum);
      CHECK(std::abs(segs[0].end - g.end) <= quantum);
    }
  }
}

TEST_CASE("soft_nms: examples") {
  const ActionSegment a{0, 0.9, 0.0, 10.0};
  auto one = soft_nms({a}, 0.5, 0.001, true);
  REQUIRE(one.size() == 1);
  CHECK(same(one[0], a, 0.0));

  auto disjoint = soft_nms({{0, 0.6, 20.0, 30.0}, a}, 0.5, 0.001, true);
  REQUIRE(disjoint.size() == 2);
  CHECK(same(disjoint[0], a, 0.0));
  CHECK(disjoint[1].score == 0.6);

  auto pair = soft_nms({a, {0, 0.8, 5.0, 15.0}}, 0.5, 0.001, true);
  REQUIRE(pair.size() == 2);
  CHECK(std::abs(pair[1].score - 0.8 * std::exp(-(1.0 / 9.0) / 0.5)) < 1e-12);
  CHECK(pair[1].score == doctest::Approx(0.6406).epsilon(1e-3));

  // Other classes are untouched.
  auto cross = soft_nms({a, {1, 0.8, 5.0, 15.0}}, 0.5, 0.001, true);
  CHECK(cross[1].score == 0.8);
  CHECK(soft_nms({a, {1, 0.8, 5.0, 15.0}}, 0.5, 0.001, false)[1].score < 0.8);
  CHECK_THROWS_AS(soft_nms({a}, 0.0, 0.001, true), std::invalid_argument);
}

TEST_CASE("soft_nms: deterministic ties") {
  auto out = soft_nms({{1, 0.5, 3.0, 4.0}, {0, 0.5, 3.0, 4.0}, {0, 0.5, 1.0, 2.0}}, 0.5, 0.001, true);
  REQUIRE(out.size() == 3);
  CHECK(out[0].start == 1.0);
  CHECK(out[1].class_id == 0);
  CHECK(out[2].class_id == 1);
}

TEST_CASE("soft_nms: equals brute force and never raises scores") {
  Rng rng(22);
  for (int trial = 0; trial < 300; ++trial) {
    const auto segs = random_segments(rng, 1 + static_cast<std::size_t>(rng.uniform_int(0, 19)), 3);
    const bool per_class = trial % 2 == 0;
    const auto got = soft_nms(segs, 0.5, 0.01, per_class);
    const auto want = brute_soft_nms(segs, 0.5, 0.01, per_class);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(same(got[i], want[i]));
    for (const auto& o : got) {
      const bool found = std::any_of(segs.begin(), segs.end(), [&](const ActionSegment& s) {
        return s.class_id == o.class_id && s.start == o.start && s.end == o.end && o.score <= s.score;
      });
      CHECK(found);
    }
  }
}

TEST_CASE("soft_nms: tiny sigma behaves like hard NMS") {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const auto segs = random_segments(rng, 1 + static_cast<std::size_t>(rng.uniform_int(0, 19)), 2);
    // Hard NMS: greedily keep a segment if it overlaps no kept same-class one.
    auto order = segs;
    std::stable_sort(order.begin(), order.end(), [](const ActionSegment& a, const ActionSegment& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.start != b.start) return a.start < b.start;
      return a.class_id < b.class_id;
    });
    std::vector<ActionSegment> hard;
    for (const auto& s : order) {
      if (s.score < 0.01) continue;
      const bool clash = std::any_of(hard.begin(), hard.end(), [&](const ActionSegment& k) {
        return k.class_id == s.class_id && tiou(k, s) > 0.0;
      });
      if (!clash) hard.push_back(s);
    }
    const auto soft = soft_nms(segs, 1e-6, 0.01, true);
    REQUIRE(soft.size() == hard.size());
    for (std::size_t i = 0; i < soft.size(); ++i) CHECK(same(soft[i], hard[i], 0.0));
  }
}

TEST_CASE("postprocess: keeps the top segments") {
  auto lvl = level(300, 1, 1, 0.0);
  for (std::size_t t = 0; t < 300; ++t) {
    lvl.logits.at(t, 0) = -static_cast<double>(t) / 100.0;
    lvl.offsets.at(t, 1) = 0.5;
  }
  SoftNmsConfig n;
  n.max_keep = 200;
  const auto out = postprocess({lvl}, meta_with(300), {}, n);
  CHECK(out.size() == 200);
  CHECK(out.front().start == 0.0);
}
