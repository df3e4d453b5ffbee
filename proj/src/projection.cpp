#include "pmdef/projection.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "pmdef/error.hpp"

namespace pmdef {

void project_l1_ball(std::span<double> v, double radius) {
  if (!(radius >= 0.0)) throw ParameterError("l1 radius must be non-negative");
  double norm = 0.0;
  for (double x : v) norm += std::abs(x);
  if (norm <= radius) return;
  if (radius == 0.0) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  std::vector<double> u(v.size());
  std::transform(v.begin(), v.end(), u.begin(), [](double x) { return std::abs(x); });
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumulative += u[j];
    const double t = (cumulative - radius) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  for (double& x : v) {
    const double shrunk = std::max(std::abs(x) - theta, 0.0);
    x = x < 0.0 ? -shrunk : shrunk;
  }
}

double percentile(std::span<const double> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty sample");
  if (!(q >= 0.0 && q <= 100.0)) throw ParameterError("percentile must be in [0, 100]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace pmdef
