#pragma once

#include <algorithm>

namespace petal {

// A scored prediction in seconds.
struct ActionSegment {
  int class_id = 0;
  double score = 0;
  double start = 0;
  double end = 0;
};

// Temporal IoU of [a0, a1] and [b0, b1]; both must have positive length.
inline double tiou(double a0, double a1, double b0, double b1) {
  const double inter = std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  const double uni = (a1 - a0) + (b1 - b0) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double tiou(const ActionSegment& a, const ActionSegment& b) { return tiou(a.start, a.end, b.start, b.end); }

}  // namespace petal
