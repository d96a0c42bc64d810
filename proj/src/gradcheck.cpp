#include "petal/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "petal/errors.hpp"
#include "petal/rng.hpp"

namespace petal {

namespace {

double evaluate(const std::function<Var(Graph&)>& f) {
  try {
    Graph g;
    const Var out = f(g);
    const double v = g.value(out)[0];
    if (!std::isfinite(v)) throw ProbeError("grad_check: non-finite loss at probe point");
    return v;
  } catch (const ProbeError&) {
    throw;
  } catch (const NumericalError& e) {
    throw ProbeError(std::string("grad_check: ") + e.what());
  }
}

}  // namespace

GradCheckResult grad_check(const std::function<Var(Graph&)>& f, std::span<Parameter* const> params, double h,
                           std::size_t max_coords_per_param, std::uint64_t seed) {
  for (auto* p : params) p->zero_grad();
  {
    Graph g;
    Var out;
    try {
      out = f(g);
    } catch (const NumericalError& e) {
      throw ProbeError(std::string("grad_check: ") + e.what());
    }
    if (g.value(out).size() != 1) throw DimensionError("grad_check: f must return a scalar");
    if (!std::isfinite(g.value(out)[0])) throw ProbeError("grad_check: non-finite loss at probe point");
    g.backward(out);
  }

  Rng rng(seed);
  GradCheckResult res;
  for (auto* p : params) {
    const std::size_t n = p->value.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords_per_param != 0 && max_coords_per_param < n) {
      // Partial Fisher-Yates.
      for (std::size_t i = 0; i < max_coords_per_param; ++i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n - 1)));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(max_coords_per_param);
    }
    for (std::size_t idx : coords) {
      double& x = p->value.mutable_data()[idx];
      const double saved = x;
      x = saved + h;
      const double fp = evaluate(f);
      x = saved - h;
      const double fm = evaluate(f);
      x = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = p->grad[idx];
      const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      ++res.coords_checked;
      if (rel > res.max_rel_error || res.worst_param.empty()) {
        if (rel >= res.max_rel_error) {
          res.max_rel_error = rel;
          res.worst_param = p->name;
          res.worst_index = idx;
        }
      }
    }
  }
  return res;
}

}  // namespace petal
