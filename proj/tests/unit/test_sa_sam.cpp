#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "petal/gradcheck.hpp"
#include "petal/errors.hpp"
#include "petal/sa_sam.hpp"
#include "test_util.hpp"

using namespace petal;
using petal::testing::random_tensor;

namespace {

void zero(Parameter& p) {
  for (auto& v : p.value.mutable_data()) v = 0.0;
}

Tensor rows_of(const std::vector<Tensor>& rows) {
  std::vector<std::vector<double>> r;
  for (const auto& t : rows) r.emplace_back(t.data().begin(), t.data().end());
  return Tensor::from_rows(r);
}

// Dense matrix helpers for the hand-expanded oracle.
std::vector<double> matvec_rows(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t n = x.dim(0), din = x.dim(1), dout = w.dim(1);
  std::vector<double> out(n * dout);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < dout; ++j) {
      double acc = b[j];
      for (std::size_t i = 0; i < din; ++i) acc += x.at(r, i) * w.at(i, j);
      out[r * dout + j] = acc;
    }
  return out;
}

const Tensor& pv(ParamStore& s, const std::string& name) { return s.find(name)->value; }

}  // namespace

TEST_CASE("mhsa") {
  Rng rng(1);
  ParamStore store;
  AttentionConfig cfg{8, 2, 16, 1};
  MultiHeadAttention attn(store, "a", cfg, rng);
  for (auto* p : store.all())
    if (p->name.find(".b") != std::string::npos) p->value = random_tensor(p->value.shape(), rng, 0.1);

  SUBCASE("group token only attends to itself") {
    Graph g;
    const Tensor z = random_tensor({1, 8}, rng);
    std::vector<Tensor> w;
    const auto& out = g.value(mhsa(g, attn, g.constant(z), {true}, &w));
    for (const auto& head : w) CHECK(head[0] == 1.0);
    const Tensor v({1, 8}, matvec_rows(z, pv(store, "a.wv"), pv(store, "a.bv")));
    const auto expect = matvec_rows(v, pv(store, "a.wo"), pv(store, "a.bo"));
    for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(out[j] - expect[j]) < 1e-12);
  }
  SUBCASE("fully masked subjects do not reach the group token") {
    Graph g;
    Tensor z1 = random_tensor({4, 8}, rng), z2 = random_tensor({4, 8}, rng);
    for (std::size_t j = 0; j < 8; ++j) z2.at(3, j) = z1.at(3, j);
    const std::vector<bool> valid{false, false, false, true};
    const auto& o1 = g.value(mhsa(g, attn, g.constant(z1), valid));
    const auto& o2 = g.value(mhsa(g, attn, g.constant(z2), valid));
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(o1.at(3, j) == o2.at(3, j));
      for (std::size_t r = 0; r < 3; ++r) CHECK(o1.at(r, j) == 0.0);
    }
  }
  SUBCASE("no valid positions") {
    Graph g;
    CHECK_THROWS_AS(mhsa(g, attn, g.constant(Tensor::zeros({2, 8})), {false, false}), InvalidMaskError);
  }
}

TEST_CASE("mhsa single head matches a dense 4x4 score matrix") {
  Rng rng(2);
  ParamStore store;
  MultiHeadAttention attn(store, "a", AttentionConfig{4, 1, 8, 1}, rng);
  const Tensor z = random_tensor({4, 4}, rng);
  Graph g;
  const auto& out = g.value(mhsa(g, attn, g.constant(z), {true, true, true, true}));

  const Tensor zeros4 = Tensor::zeros({4});
  const Tensor Q({4, 4}, matvec_rows(z, pv(store, "a.wq"), zeros4));
  const Tensor K({4, 4}, matvec_rows(z, pv(store, "a.wk"), zeros4));
  const Tensor V({4, 4}, matvec_rows(z, pv(store, "a.wv"), zeros4));
  std::vector<double> heads(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    double s[4], z_sum = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      s[j] = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s[j] += Q.at(i, c) * K.at(j, c);
      s[j] = std::exp(s[j] / 2.0);  // sqrt(D_q) = 2
      z_sum += s[j];
    }
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t c = 0; c < 4; ++c) heads[i * 4 + c] += s[j] / z_sum * V.at(j, c);
  }
  const auto expect = matvec_rows(Tensor({4, 4}, heads), pv(store, "a.wo"), zeros4);
  for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(out[i] - expect[i]) < 1e-12);
}

TEST_CASE("sa_sam layer") {
  Rng rng(3);
  ParamStore store;
  AttentionConfig cfg{8, 2, 12, 1};
  SubjectAttention sam(store, "s", cfg, rng);
  const auto& blk = sam.layers()[0];

  SUBCASE("zero output projections give the identity") {
    zero(blk.attention().out_weight());
    zero(blk.attention().out_bias());
    zero(blk.ffn_out_weight());
    zero(blk.ffn_out_bias());
    Graph g;
    const Tensor z = random_tensor({4, 8}, rng);
    const auto& out = g.value(sam.layer(g, 0, g.constant(z), {true, true, true, true}));
    CHECK(out.values() == z.values());
  }
  SUBCASE("single token equals mhsa then FFN composition") {
    Graph g;
    const Tensor z = random_tensor({1, 8}, rng);
    const auto& out = g.value(sam.layer(g, 0, g.constant(z), {true}));

    auto ln = [](const Tensor& x, const Tensor& gm, const Tensor& bt) {
      double mu = 0, var = 0;
      for (double v : x.data()) mu += v / 8.0;
      for (double v : x.data()) var += (v - mu) * (v - mu) / 8.0;
      std::vector<double> y(8);
      for (std::size_t j = 0; j < 8; ++j) y[j] = gm[j] * (x[j] - mu) / std::sqrt(var + 1e-5) + bt[j];
      return Tensor({1, 8}, y);
    };
    // With one token, attention is the identity over V.
    const Tensor n1 = ln(z, pv(store, "s.layer0.ln1.gamma"), pv(store, "s.layer0.ln1.beta"));
    const Tensor v({1, 8}, matvec_rows(n1, pv(store, "s.layer0.attn.wv"), pv(store, "s.layer0.attn.bv")));
    const auto a = matvec_rows(v, pv(store, "s.layer0.attn.wo"), pv(store, "s.layer0.attn.bo"));
    std::vector<double> z1(8);
    for (std::size_t j = 0; j < 8; ++j) z1[j] = z[j] + a[j];
    const Tensor n2 = ln(Tensor({1, 8}, z1), pv(store, "s.layer0.ln2.gamma"), pv(store, "s.layer0.ln2.beta"));
    auto h = matvec_rows(n2, pv(store, "s.layer0.ffn.w1"), pv(store, "s.layer0.ffn.b1"));
    for (auto& e : h) e = std::max(e, 0.0);
    const auto f = matvec_rows(Tensor({1, 12}, h), pv(store, "s.layer0.ffn.w2"), pv(store, "s.layer0.ffn.b2"));
    for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(out[j] - (z1[j] + f[j])) < 1e-12);
  }
  SUBCASE("invalid positions stay exactly zero") {
    Graph g;
    Tensor z = random_tensor({5, 8}, rng);
    for (std::size_t j = 0; j < 8; ++j) z.at(1, j) = z.at(3, j) = 0.0;
    const auto& out = g.value(sam.layer(g, 0, g.constant(z), {true, false, true, false, true}));
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(out.at(1, j) == 0.0);
      CHECK(out.at(3, j) == 0.0);
    }
  }
  SUBCASE("group position must be valid") {
    Graph g;
    CHECK_THROWS_AS(sam.layer(g, 0, g.constant(Tensor::zeros({2, 8})), {true, false}), InvalidMaskError);
  }
}

TEST_CASE("aggregate_group") {
  Rng rng(4);
  SUBCASE("empty stack returns the initial group token") {
    ParamStore store;
    SubjectAttention sam(store, "s", AttentionConfig{8, 2, 0, 0}, rng);
    TokenSet ts{{random_tensor({8}, rng)}, {}, {true}};
    const Tensor g0 = random_tensor({8}, rng);
    CHECK(sam.aggregate(ts, g0).values() == g0.values());
  }
  ParamStore store;
  SubjectAttention sam(store, "s", AttentionConfig{8, 2, 16, 2}, rng);
  SUBCASE("all-invalid tokens: output depends on g0 alone") {
    const Tensor g0 = random_tensor({8}, rng);
    TokenSet a{{Tensor::zeros({8}), Tensor::zeros({8}), Tensor::zeros({8})}, {}, {false, false, false}};
    const Tensor ga = sam.aggregate(a, g0);
    TokenSet b = a;
    b.individual[0] = random_tensor({8}, rng, 100.0);
    CHECK(sam.aggregate(b, g0).values() == ga.values());
    TokenSet one{{}, {}, {}};
    CHECK(sam.aggregate(one, g0).values() == ga.values());
  }
  SUBCASE("equals step-by-step layer application") {
    TokenSet ts{{random_tensor({8}, rng), random_tensor({8}, rng), random_tensor({8}, rng)}, {}, {true, true, true}};
    const Tensor g0 = random_tensor({8}, rng);
    const Tensor out = sam.aggregate(ts, g0);
    Graph g;
    std::vector<Tensor> rows = ts.individual;
    rows.push_back(g0);
    Var z = g.constant(rows_of(rows));
    z = sam.layer(g, 0, z, {true, true, true, true});
    z = sam.layer(g, 1, z, {true, true, true, true});
    for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(out[j] - g.value(z).at(3, j)) < 1e-12);
  }
}

TEST_CASE("sa_sam invariants") {
  Rng rng(5);
  ParamStore store;
  SubjectAttention sam(store, "s", AttentionConfig{16, 8, 0, 3}, rng);
  const std::size_t K = 6;

  SUBCASE("permutation invariance of the group token") {
    TokenSet ts;
    for (std::size_t k = 0; k < K; ++k) ts.individual.push_back(random_tensor({16}, rng));
    ts.valid = {true, true, true, true, false, false};
    ts.individual[4] = ts.individual[5] = Tensor::zeros({16});
    const Tensor g0 = random_tensor({16}, rng);
    const Tensor ref = sam.aggregate(ts, g0);
    double drift = 0.0;
    std::vector<std::size_t> perm(K);
    std::iota(perm.begin(), perm.end(), 0);
    for (int trial = 0; trial < 50; ++trial) {
      for (std::size_t i = K - 1; i > 0; --i) std::swap(perm[i], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
      TokenSet p;
      for (std::size_t k = 0; k < K; ++k) {
        p.individual.push_back(ts.individual[perm[k]]);
        p.valid.push_back(ts.valid[perm[k]]);
      }
      drift = std::max(drift, max_abs_diff(sam.aggregate(p, g0), ref));
    }
    CHECK(drift <= 1e-9);
  }
  SUBCASE("garbage under the mask never reaches the group token") {
    TokenSet ts;
    for (std::size_t k = 0; k < K; ++k) ts.individual.push_back(k < 2 ? random_tensor({16}, rng) : Tensor::zeros({16}));
    ts.valid = {true, true, false, false, false, false};
    const Tensor g0 = random_tensor({16}, rng);
    const Tensor ref = sam.aggregate(ts, g0);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      TokenSet gtok = ts;
      for (std::size_t k = 2; k < K; ++k) gtok.individual[k] = random_tensor({16}, rng, 1e3);
      worst = std::max(worst, max_abs_diff(sam.aggregate(gtok, g0), ref));
    }
    CHECK(worst <= 1e-12);
  }
  SUBCASE("attention rows over valid columns sum to one") {
    Graph g;
    const std::vector<bool> valid{true, false, true, true, false, true, true};
    std::vector<Tensor> w;
    mhsa(g, sam.layers()[0].attention(), g.constant(random_tensor({7, 16}, rng)), valid, &w);
    REQUIRE(w.size() == 8);
    for (const auto& head : w)
      for (std::size_t i = 0; i < 7; ++i) {
        if (!valid[i]) continue;
        double s = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
          if (!valid[j]) CHECK(head.at(i, j) == 0.0);
          s += head.at(i, j);
        }
        CHECK(std::abs(s - 1.0) < 1e-9);
      }
  }
  SUBCASE("end-to-end gradient") {
    std::vector<Parameter> toks;
    for (std::size_t k = 0; k < 3; ++k) toks.emplace_back("p" + std::to_string(k), random_tensor({16}, rng));
    Parameter g0("g0", random_tensor({16}, rng));
    const Tensor c = random_tensor({16}, rng);
    std::vector<Parameter*> ps = store.all();
    for (auto& t : toks) ps.push_back(&t);
    ps.push_back(&g0);
    const auto res = grad_check(
        [&](Graph& g) {
          std::vector<Var> tv;
          for (auto& t : toks) tv.push_back(g.param(t));
          return petal::testing::weighted_sum(g, sam.aggregate(g, tv, {true, false, true}, g.param(g0)), c);
        },
        ps, 1e-5, 6, 7);
    CHECK(res.max_rel_error < 1e-4);
  }
}
