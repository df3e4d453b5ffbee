#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace pmdef::test {

// A gradient check parameterised by seed; returns the max relative error.
struct GradCase {
  std::string name;
  std::function<double(std::uint64_t seed)> run;
};

std::vector<GradCase> primitive_grad_cases();
// Cross-entropy, the defence losses (kl, kl_temperature, kl_hidden, mse),
// the C&W objective and the white-box composition.
std::vector<GradCase> composed_grad_cases();

}  // namespace pmdef::test
