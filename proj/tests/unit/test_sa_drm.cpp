#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "petal/gradcheck.hpp"
#include "petal/sa_drm.hpp"
#include "test_util.hpp"

using namespace petal;
using petal::testing::random_tensor;
using petal::testing::weighted_sum;

namespace {

VideoMeta meta_for(std::size_t H, std::size_t W, std::size_t D, double px = 16.0) {
  VideoMeta m;
  m.frame_width = static_cast<double>(W) * px;
  m.frame_height = static_cast<double>(H) * px;
  m.fps = 15;
  m.snippet_stride = 4;
  m.num_snippets = 1;
  m.feature_height = H;
  m.feature_width = W;
  m.feature_dim = D;
  return m;
}

SubjectBox box(double x1, double y1, double x2, double y2, double conf = 0.9) { return {x1, y1, x2, y2, conf}; }

// Reference bilinear lookup at a cell-center coordinate inside the grid.
double bilinear(const Tensor& f, double y, double x, std::size_t d) {
  const std::size_t W = f.dim(1);
  const auto y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, f.dim(0) - 1), x1 = std::min(x0 + 1, W - 1);
  const double ly = y - std::floor(y), lx = x - std::floor(x);
  auto v = [&](std::size_t r, std::size_t c) { return f[(r * W + c) * f.dim(2) + d]; };
  return (1 - ly) * (1 - lx) * v(y0, x0) + (1 - ly) * lx * v(y0, x1) + ly * (1 - lx) * v(y1, x0) + ly * lx * v(y1, x1);
}

}  // namespace

TEST_CASE("rank_subjects") {
  const auto meta = meta_for(10, 10, 1, 10.0);  // 100 x 100 frame
  SUBCASE("fewer boxes than K") {
    const std::vector<SubjectBox> boxes{box(0, 0, 10, 10), box(0, 0, 50, 50)};
    CHECK(rank_subject_indices(boxes, meta, 6) == std::vector<std::size_t>{1, 0});
  }
  SUBCASE("area ratios 0.3, 0.1, 0.5 with K=2") {
    const std::vector<SubjectBox> boxes{box(0, 0, 30, 100), box(0, 0, 10, 100), box(0, 0, 50, 100)};
    CHECK(rank_subject_indices(boxes, meta, 2) == std::vector<std::size_t>{2, 0});
    const auto ranked = rank_subjects(boxes, meta, 2);
    CHECK(ranked[0].x2 == 50);
  }
  SUBCASE("empty input") { CHECK(rank_subjects({}, meta, 3).empty()); }
  SUBCASE("clipping and dropping") {
    const std::vector<SubjectBox> boxes{box(-50, -50, -10, -10), box(80, 80, 200, 200), box(0, 0, 30, 30)};
    CHECK(rank_subject_indices(boxes, meta, 3) == std::vector<std::size_t>{2, 1});
    CHECK(rank_subjects(boxes, meta, 3)[1].x2 == 100);
  }
  SUBCASE("prefix of the stable full sort") {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<SubjectBox> boxes;
      for (int i = 0; i < 10; ++i) {
        // Coarse grid of sizes and confidences forces ties.
        const double w = 10.0 * static_cast<double>(rng.uniform_int(1, 3));
        const double h = 10.0 * static_cast<double>(rng.uniform_int(1, 3));
        const double x = 10.0 * static_cast<double>(rng.uniform_int(0, 7));
        const double y = 10.0 * static_cast<double>(rng.uniform_int(0, 7));
        boxes.push_back(box(x, y, x + w, y + h, 0.5 + 0.25 * static_cast<double>(rng.uniform_int(0, 2))));
      }
      std::vector<std::size_t> order(10);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double ra = boxes[a].area() / 1e4, rb = boxes[b].area() / 1e4;
        if (ra != rb) return ra > rb;
        return boxes[a].confidence > boxes[b].confidence;
      });
      order.resize(6);
      CHECK(rank_subject_indices(boxes, meta, 6) == order);
    }
  }
}

TEST_CASE("roi_align") {
  Rng rng(21);
  SUBCASE("constant field") {
    const auto meta = meta_for(6, 8, 3);
    const Tensor f = Tensor::full({6, 8, 3}, 2.5);
    const Tensor r = roi_align(f, box(13, 7, 101, 77), meta);
    CHECK(r.shape() == Shape{7, 7, 3});
    for (double v : r.data()) CHECK(std::abs(v - 2.5) < 1e-12);
  }
  SUBCASE("full-frame box, one bin, 2x2 grid") {
    const auto meta = meta_for(2, 2, 2);
    const Tensor f = random_tensor({2, 2, 2}, rng);
    const Tensor r = roi_align(f, box(0, 0, 32, 32), meta, {1, 1});
    // Samples sit at (2i+1)/4 of the box in each axis; shift by half a cell
    // to get cell-center coordinates.
    for (std::size_t d = 0; d < 2; ++d) {
      double expect = 0.0;
      for (double sy : {0.5, 1.5})
        for (double sx : {0.5, 1.5}) expect += bilinear(f, sy - 0.5, sx - 0.5, d) / 4.0;
      CHECK(std::abs(r[d] - expect) < 1e-12);
    }
  }
  SUBCASE("left half of an integer-aligned grid equals its cell mean") {
    const auto meta = meta_for(2, 4, 3);
    const Tensor f = random_tensor({2, 4, 3}, rng);
    const Tensor r = roi_align(f, box(0, 0, 32, 32), meta, {1, 1});
    for (std::size_t d = 0; d < 3; ++d) {
      double mean = 0.0;
      for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 2; ++x) mean += f[(y * 4 + x) * 3 + d] / 4.0;
      CHECK(std::abs(r[d] - mean) < 1e-9);
    }
  }
  SUBCASE("degenerate box is widened, not rejected") {
    const auto meta = meta_for(4, 4, 1);
    const Tensor f = random_tensor({4, 4, 1}, rng);
    const Tensor r = roi_align(f, box(16, 16, 16.001, 16.001), meta, {1, 1});
    CHECK(std::isfinite(r[0]));
  }
  SUBCASE("exactly linear in the feature map") {
    const auto meta = meta_for(5, 7, 2);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor f1 = random_tensor({5, 7, 2}, rng), f2 = random_tensor({5, 7, 2}, rng);
      const double a = rng.normal(), b = rng.normal();
      std::vector<double> mix(f1.size());
      for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * f1[i] + b * f2[i];
      const double x1 = rng.uniform(0, 100), y1 = rng.uniform(0, 70);
      const auto bx = box(x1, y1, x1 + rng.uniform(1, 12), y1 + rng.uniform(1, 10));
      const Tensor r1 = roi_align(f1, bx, meta), r2 = roi_align(f2, bx, meta);
      const Tensor rm = roi_align(Tensor({5, 7, 2}, mix), bx, meta);
      for (std::size_t i = 0; i < rm.size(); ++i) CHECK(std::abs(rm[i] - (a * r1[i] + b * r2[i])) < 1e-9);
    }
  }
}

TEST_CASE("extract_tokens") {
  Rng rng(33);
  const auto meta = meta_for(6, 6, 4);
  SUBCASE("no detections") {
    const auto ts = extract_tokens(random_tensor({6, 6, 4}, rng), {}, meta, 3);
    CHECK(ts.valid == std::vector<bool>{false, false, false});
    for (const auto& t : ts.individual)
      for (double v : t.data()) CHECK(v == 0.0);
  }
  SUBCASE("one box over a constant field") {
    const auto ts = extract_tokens(Tensor::full({6, 6, 4}, -1.5), {box(10, 10, 60, 40)}, meta, 3);
    CHECK(ts.valid == std::vector<bool>{true, false, false});
    for (double v : ts.individual[0].data()) CHECK(std::abs(v + 1.5) < 1e-12);
    CHECK(ts.num_valid() == 1);
  }
  SUBCASE("tokens are the mean of their roi grid") {
    const Tensor f = random_tensor({6, 6, 4}, rng);
    const std::vector<SubjectBox> boxes{box(0, 0, 40, 40), box(50, 10, 90, 90), box(20, 60, 70, 95)};
    const auto ts = extract_tokens(f, boxes, meta, 5);
    CHECK(ts.valid == std::vector<bool>{true, true, true, false, false});
    const auto order = rank_subject_indices(boxes, meta, 5);
    for (std::size_t k = 0; k < 3; ++k) {
      const Tensor grid = roi_align(f, boxes[order[k]], meta);
      for (std::size_t d = 0; d < 4; ++d) {
        double m = 0.0;
        for (std::size_t c = 0; c < 49; ++c) m += grid[c * 4 + d];
        CHECK(std::abs(ts.individual[k][d] - m / 49.0) < 1e-12);
      }
    }
    for (std::size_t k = 3; k < 5; ++k)
      for (double v : ts.individual[k].data()) CHECK(v == 0.0);
  }
  SUBCASE("gradient w.r.t. the feature map") {
    Parameter f("f", random_tensor({36, 4}, rng));
    const std::vector<SubjectBox> boxes{box(3, 5, 47, 41), box(50, 12, 93, 88)};
    const Tensor c = random_tensor({3, 4}, rng);
    Parameter* ps[] = {&f};
    const auto res = grad_check(
        [&](Graph& g) {
          const auto tv = extract_tokens(g, g.param(f), boxes, meta, 3);
          return weighted_sum(g, ops::stack_rows(g, tv.individual), c);
        },
        ps);
    CHECK(res.max_rel_error < 1e-6);
  }
}

TEST_CASE("global average") {
  const Tensor f({1, 2, 2}, {1, 2, 3, 6});
  const Tensor a = global_average(f);
  CHECK(a[0] == 2.0);
  CHECK(a[1] == 4.0);
}
