#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "petal/autograd.hpp"

namespace petal {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

// Compares reverse-mode gradients of the scalar built by `f` against central
// differences. Relative error is |analytic - numeric| / max(1, |numeric|).
// With max_coords_per_param == 0 every coordinate is probed; otherwise that
// many coordinates per parameter are sampled with `seed`.
GradCheckResult grad_check(const std::function<Var(Graph&)>& f, std::span<Parameter* const> params, double h = 1e-5,
                           std::size_t max_coords_per_param = 0, std::uint64_t seed = 0);

}  // namespace petal
