#include "pmdef/probe.hpp"

#include <cmath>
#include <random>

#include "pmdef/error.hpp"

namespace pmdef {

HiddenProbe make_hidden_probe(const Model& classifier, std::size_t source_layer, std::size_t dim,
                              std::uint64_t seed) {
  const auto& layers = classifier.spec().layers;
  if (source_layer >= layers.size())
    throw ConfigError("hidden probe source layer " + std::to_string(source_layer) + " does not exist in " +
                      classifier.spec().name + " (" + std::to_string(layers.size()) + " layers)");
  if (dim == 0) throw ConfigError("hidden probe dimension must be positive");
  const auto features = shape_size(classifier.spec().layer_shapes()[source_layer]);
  HiddenProbe probe{source_layer, Tensor({features, dim}), Tensor({dim}, 0.0)};
  const double limit = std::sqrt(6.0 / static_cast<double>(features + dim));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : probe.weight.values()) v = dist(rng);
  return probe;
}

Var probe_distribution(Tape& tape, const BoundModel& classifier, std::size_t source_layer, Var weight, Var bias,
                       Var x) {
  ForwardOptions options;
  options.capture_layer = source_layer;
  Var features = ops::flatten(tape, classifier.forward(x, options).captured);
  if (tape.value(features).dim(1) != tape.value(weight).dim(0))
    throw ConfigError("hidden probe expects " + std::to_string(tape.value(weight).dim(0)) + " features, layer " +
                      std::to_string(source_layer) + " provides " + std::to_string(tape.value(features).dim(1)));
  return ops::softmax(tape, ops::add_bias(tape, ops::matmul(tape, features, weight), bias));
}

Tensor hidden_probe_forward(const Model& classifier, const HiddenProbe& probe, const Tensor& x) {
  if (probe.source_layer >= classifier.spec().layers.size())
    throw ConfigError("hidden probe source layer " + std::to_string(probe.source_layer) + " does not exist");
  check_input(classifier.input_shape(), x, "hidden_probe_forward");
  Tape tape;
  auto bound = classifier.bind(tape, false);
  Var w = tape.constant(probe.weight);
  Var b = tape.constant(probe.bias);
  return tape.value(probe_distribution(tape, bound, probe.source_layer, w, b, tape.constant(x)));
}

}  // namespace pmdef
