#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace petal {

struct SuiteEntry {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t coords = 0;

  bool passed() const { return max_rel_error < tolerance; }
};

// Finite-difference checks of every differentiable primitive (tolerance
// 1e-6) and of the full training loss on a two-snippet toy model (1e-4).
std::vector<SuiteEntry> run_gradient_suite(std::uint64_t seed = 0);

}  // namespace petal
