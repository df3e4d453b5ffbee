#pragma once

#include <functional>

#include "pmdef/tape.hpp"

namespace pmdef {

// A differentiable scalar function of one tensor, expressed on a tape.
using ScalarFunction = std::function<Var(Tape&, Var)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  Tensor analytic;
  Tensor numeric;
};

// Compares backward() against per-coordinate central differences
// (f(x + h e_i) - f(x - h e_i)) / 2h. Relative error uses the denominator
// max(|a|, |b|, 1e-8).
GradCheckResult grad_check_detailed(const ScalarFunction& f, const Tensor& x, double h = 1e-5);
double grad_check(const ScalarFunction& f, const Tensor& x, double h = 1e-5);

}  // namespace pmdef
