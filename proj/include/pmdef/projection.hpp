#pragma once

#include <span>

namespace pmdef {

// Euclidean projection onto {v : ||v||_1 <= radius}, in place. Sort-based
// simplex threshold (O(n log n)).
void project_l1_ball(std::span<double> v, double radius);

// Linearly interpolated q-th percentile (q in [0, 100]) of the values.
double percentile(std::span<const double> values, double q);

}  // namespace pmdef
