#include "pmdef/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "pmdef/error.hpp"

namespace pmdef {
namespace {

double evaluate(const ScalarFunction& f, const Tensor& x) {
  Tape tape;
  Var out = f(tape, tape.constant(x));
  const Tensor& v = tape.value(out);
  if (v.size() != 1) throw ContractError("grad_check needs a scalar function, got " + to_string(v.shape()));
  if (!std::isfinite(v[0])) throw EvaluationError("grad_check: function value is not finite");
  return v[0];
}

}  // namespace

GradCheckResult grad_check_detailed(const ScalarFunction& f, const Tensor& x, double h) {
  if (!(h > 0.0) || !std::isfinite(h)) throw ParameterError("grad_check step must be positive and finite");

  GradCheckResult result;
  {
    Tape tape;
    Var input = tape.leaf(x, true);
    Var out = f(tape, input);
    if (!std::isfinite(tape.value(out)[0])) throw EvaluationError("grad_check: function value is not finite");
    tape.backward(out);
    result.analytic = tape.grad(input);
  }

  result.numeric = Tensor(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + h;
    const double up = evaluate(f, probe);
    probe[i] = original - h;
    const double down = evaluate(f, probe);
    probe[i] = original;
    result.numeric[i] = (up - down) / (2.0 * h);

    const double a = result.analytic[i];
    const double b = result.numeric[i];
    const double rel = std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_index = i;
    }
  }
  return result;
}

double grad_check(const ScalarFunction& f, const Tensor& x, double h) {
  return grad_check_detailed(f, x, h).max_relative_error;
}

}  // namespace pmdef
