#pragma once

#include <cstdint>

#include "pmdef/model.hpp"

namespace pmdef {

// Softmax projection of a flattened hidden feature map of the classifier:
// softmax(W F(x) + b).
struct HiddenProbe {
  std::size_t source_layer = 0;
  Tensor weight;  // features x dim
  Tensor bias;    // dim

  std::size_t dim() const { return bias.size(); }
  friend bool operator==(const HiddenProbe&, const HiddenProbe&) = default;
};

// Glorot-uniform projection, zero bias. Throws ConfigError for a bad layer.
HiddenProbe make_hidden_probe(const Model& classifier, std::size_t source_layer, std::size_t dim, std::uint64_t seed);

// Probe distribution on a tape; weight/bias are the bound probe parameters.
Var probe_distribution(Tape& tape, const BoundModel& classifier, std::size_t source_layer, Var weight, Var bias,
                       Var x);

Tensor hidden_probe_forward(const Model& classifier, const HiddenProbe& probe, const Tensor& x);

}  // namespace pmdef
