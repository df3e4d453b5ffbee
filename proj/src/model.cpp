#include "pmdef/model.hpp"

#include <algorithm>
#include <cmath>

#include "pmdef/error.hpp"

namespace pmdef {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string describe(std::size_t index, const LayerSpec& layer) {
  return "layer " + std::to_string(index) + " (" + layer_name(layer) + ")";
}

bool has_parameters(const LayerSpec& layer) {
  return std::holds_alternative<DenseLayer>(layer) || std::holds_alternative<ConvLayer>(layer);
}

// Whether the layer output reaches a ReLU before the next parameterized layer.
bool feeds_relu(const std::vector<LayerSpec>& layers, std::size_t index) {
  for (std::size_t j = index + 1; j < layers.size(); ++j) {
    if (std::holds_alternative<ReluLayer>(layers[j])) return true;
    if (std::holds_alternative<DropoutLayer>(layers[j])) continue;
    return false;
  }
  return false;
}

ops::Padding padding_from(const std::string& s) {
  if (s == "valid") return ops::Padding::valid;
  if (s == "same") return ops::Padding::same;
  throw SpecError("unknown padding '" + s + "'");
}

}  // namespace

std::string layer_name(const LayerSpec& layer) {
  return std::visit(overloaded{
                        [](const DenseLayer&) { return std::string("dense"); },
                        [](const ConvLayer&) { return std::string("conv"); },
                        [](const MaxPoolLayer&) { return std::string("maxpool"); },
                        [](const ReluLayer&) { return std::string("relu"); },
                        [](const SigmoidLayer&) { return std::string("sigmoid"); },
                        [](const DropoutLayer&) { return std::string("dropout"); },
                        [](const FlattenLayer&) { return std::string("flatten"); },
                        [](const SoftmaxLayer&) { return std::string("softmax"); },
                        [](const ReshapeLayer&) { return std::string("reshape"); },
                    },
                    layer);
}

std::vector<Shape> ModelSpec::layer_shapes() const {
  if (input_shape.empty()) throw SpecError(name + ": empty input shape");
  for (auto d : input_shape)
    if (d == 0) throw SpecError(name + ": zero-sized input dimension");
  std::vector<Shape> shapes;
  Shape current = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    const auto where = name + ": " + describe(i, layer);
    current = std::visit(
        overloaded{
            [&](const DenseLayer& d) -> Shape {
              if (current.size() != 1)
                throw SpecError(where + " needs a flat input, got " + to_string(current) + " (missing flatten?)");
              if (d.units == 0) throw SpecError(where + " has zero units");
              return {d.units};
            },
            [&](const ConvLayer& c) -> Shape {
              if (current.size() != 3) throw SpecError(where + " needs an H x W x C input, got " + to_string(current));
              if (c.filters == 0 || c.kernel == 0 || c.stride == 0) throw SpecError(where + " has a zero size");
              if (c.padding == ops::Padding::valid) {
                if (c.kernel > current[0] || c.kernel > current[1])
                  throw SpecError(where + " kernel exceeds input " + to_string(current));
                return {(current[0] - c.kernel) / c.stride + 1, (current[1] - c.kernel) / c.stride + 1, c.filters};
              }
              return {(current[0] + c.stride - 1) / c.stride, (current[1] + c.stride - 1) / c.stride, c.filters};
            },
            [&](const MaxPoolLayer& m) -> Shape {
              if (current.size() != 3) throw SpecError(where + " needs an H x W x C input, got " + to_string(current));
              if (m.window == 0 || m.stride == 0) throw SpecError(where + " has a zero size");
              if (m.window > current[0] || m.window > current[1])
                throw SpecError(where + " window exceeds input " + to_string(current));
              return {(current[0] - m.window) / m.stride + 1, (current[1] - m.window) / m.stride + 1, current[2]};
            },
            [&](const DropoutLayer& d) -> Shape {
              if (!(d.rate >= 0.0 && d.rate < 1.0)) throw SpecError(where + " rate must be in [0, 1)");
              return current;
            },
            [&](const FlattenLayer&) -> Shape { return {shape_size(current)}; },
            [&](const SoftmaxLayer&) -> Shape {
              if (current.size() != 1) throw SpecError(where + " needs a flat input, got " + to_string(current));
              return current;
            },
            [&](const ReshapeLayer& r) -> Shape {
              if (r.shape.empty() || shape_size(r.shape) != shape_size(current))
                throw SpecError(where + " cannot reshape " + to_string(current) + " to " + to_string(r.shape));
              return r.shape;
            },
            [&](const auto&) -> Shape { return current; },
        },
        layer);
    shapes.push_back(current);
  }
  for (std::size_t i = 0; i + 1 < layers.size(); ++i)
    if (std::holds_alternative<SoftmaxLayer>(layers[i]))
      throw SpecError(name + ": " + describe(i, layers[i]) + " softmax is only allowed as the final layer");
  return shapes;
}

Shape ModelSpec::output_shape() const {
  auto shapes = layer_shapes();
  return shapes.empty() ? input_shape : shapes.back();
}

bool ModelSpec::is_classifier() const {
  return !layers.empty() && std::holds_alternative<SoftmaxLayer>(layers.back());
}

std::size_t ModelSpec::parameter_count() const {
  const auto shapes = layer_shapes();
  std::size_t total = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Shape& in = i == 0 ? input_shape : shapes[i - 1];
    if (const auto* d = std::get_if<DenseLayer>(&layers[i])) total += in[0] * d->units + d->units;
    if (const auto* c = std::get_if<ConvLayer>(&layers[i])) total += c->kernel * c->kernel * in[2] * c->filters + c->filters;
  }
  return total;
}

bool operator==(const ModelSpec& a, const ModelSpec& b) { return to_json(a) == to_json(b); }

nlohmann::json to_json(const ModelSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : spec.layers) {
    nlohmann::json j = {{"type", layer_name(layer)}};
    std::visit(overloaded{
                   [&](const DenseLayer& d) { j["units"] = d.units; },
                   [&](const ConvLayer& c) {
                     j["filters"] = c.filters;
                     j["kernel"] = c.kernel;
                     j["stride"] = c.stride;
                     j["padding"] = c.padding == ops::Padding::valid ? "valid" : "same";
                   },
                   [&](const MaxPoolLayer& m) {
                     j["window"] = m.window;
                     j["stride"] = m.stride;
                   },
                   [&](const DropoutLayer& d) { j["rate"] = d.rate; },
                   [&](const ReshapeLayer& r) { j["shape"] = r.shape; },
                   [](const auto&) {},
               },
               layer);
    layers.push_back(std::move(j));
  }
  return {{"name", spec.name}, {"input_shape", spec.input_shape}, {"layers", std::move(layers)}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  try {
    ModelSpec spec;
    spec.name = j.value("name", std::string("model"));
    spec.input_shape = j.at("input_shape").get<Shape>();
    for (const auto& l : j.at("layers")) {
      const auto type = l.at("type").get<std::string>();
      if (type == "dense") {
        spec.layers.emplace_back(DenseLayer{l.at("units").get<std::size_t>()});
      } else if (type == "conv") {
        spec.layers.emplace_back(ConvLayer{l.at("filters").get<std::size_t>(), l.at("kernel").get<std::size_t>(),
                                           l.value("stride", std::size_t{1}),
                                           padding_from(l.value("padding", std::string("valid")))});
      } else if (type == "maxpool") {
        const auto window = l.at("window").get<std::size_t>();
        spec.layers.emplace_back(MaxPoolLayer{window, l.value("stride", window)});
      } else if (type == "relu") {
        spec.layers.emplace_back(ReluLayer{});
      } else if (type == "sigmoid") {
        spec.layers.emplace_back(SigmoidLayer{});
      } else if (type == "dropout") {
        spec.layers.emplace_back(DropoutLayer{l.at("rate").get<double>()});
      } else if (type == "flatten") {
        spec.layers.emplace_back(FlattenLayer{});
      } else if (type == "softmax") {
        spec.layers.emplace_back(SoftmaxLayer{});
      } else if (type == "reshape") {
        spec.layers.emplace_back(ReshapeLayer{l.at("shape").get<Shape>()});
      } else {
        throw SpecError("unknown layer type '" + type + "'");
      }
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("malformed model spec: ") + e.what());
  }
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [index, p] : layers) total += p.weight.size() + p.bias.size();
  return total;
}

Model::Model(ModelSpec spec, ParameterStore params, std::uint64_t seed, Preprocessing preprocessing)
    : spec_(std::move(spec)), params_(std::move(params)), seed_(seed), preprocessing_(preprocessing) {
  const auto shapes = spec_.layer_shapes();
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    if (!has_parameters(spec_.layers[i])) continue;
    const auto it = params_.layers.find(i);
    if (it == params_.layers.end())
      throw SpecMismatchError(spec_.name + ": missing parameters for " + describe(i, spec_.layers[i]));
    const Shape& in = i == 0 ? spec_.input_shape : shapes[i - 1];
    Shape want_w, want_b;
    if (const auto* d = std::get_if<DenseLayer>(&spec_.layers[i])) {
      want_w = {in[0], d->units};
      want_b = {d->units};
    } else {
      const auto& c = std::get<ConvLayer>(spec_.layers[i]);
      want_w = {c.kernel, c.kernel, in[2], c.filters};
      want_b = {c.filters};
    }
    if (it->second.weight.shape() != want_w || it->second.bias.shape() != want_b)
      throw SpecMismatchError(spec_.name + ": parameter shapes for " + describe(i, spec_.layers[i]) + " are " +
                              to_string(it->second.weight.shape()) + "/" + to_string(it->second.bias.shape()) +
                              ", spec needs " + to_string(want_w) + "/" + to_string(want_b));
  }
  if (params_.layers.size() != static_cast<std::size_t>(std::count_if(spec_.layers.begin(), spec_.layers.end(),
                                                                      has_parameters)))
    throw SpecMismatchError(spec_.name + ": parameter store has entries for layers without parameters");
}

std::size_t Model::num_classes() const {
  if (!is_classifier()) throw ContractError(spec_.name + " is not a classifier (final layer is not softmax)");
  return output_shape()[0];
}

void Model::set_frozen(bool frozen) {
  for (auto& [index, p] : params_.layers) p.frozen = frozen;
}

bool Model::frozen() const {
  for (const auto& [index, p] : params_.layers)
    if (!p.frozen) return false;
  return true;
}

std::vector<Tensor*> Model::trainable_tensors() {
  std::vector<Tensor*> out;
  for (auto& [index, p] : params_.layers) {
    if (p.frozen) continue;
    out.push_back(&p.weight);
    out.push_back(&p.bias);
  }
  return out;
}

BoundModel Model::bind(Tape& tape, bool trainable) const { return BoundModel(*this, tape, trainable); }

BoundModel::BoundModel(const Model& model, Tape& tape, bool trainable) : model_(&model), tape_(&tape) {
  for (const auto& [index, p] : model.parameters().layers) {
    const bool grad = trainable && !p.frozen;
    Var w = tape.leaf(p.weight, grad);
    Var b = tape.leaf(p.bias, grad);
    vars_[index] = {w, b};
    if (grad) {
      trainable_.push_back(w);
      trainable_.push_back(b);
    }
  }
}

ForwardResult BoundModel::forward(Var x, const ForwardOptions& options) const {
  Tape& tape = *tape_;
  const auto& spec = model_->spec();
  check_input(spec.input_shape, tape.value(x), spec.name.c_str());
  const auto batch = tape.value(x).batch();

  ForwardResult result;
  Var h = x;
  if (model_->preprocessing().standardize_per_image) h = ops::standardize_per_image(tape, h);
  if (options.capture_layer && *options.capture_layer >= spec.layers.size())
    throw ConfigError(spec.name + ": capture layer " + std::to_string(*options.capture_layer) + " does not exist");

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    if (std::holds_alternative<SoftmaxLayer>(layer)) result.logits = h;
    h = std::visit(overloaded{
                       [&](const DenseLayer&) {
                         const auto& [w, b] = vars_.at(i);
                         return ops::add_bias(tape, ops::matmul(tape, h, w), b);
                       },
                       [&](const ConvLayer& c) {
                         const auto& [w, b] = vars_.at(i);
                         return ops::add_bias(tape, ops::conv2d(tape, h, w, c.stride, c.padding), b);
                       },
                       [&](const MaxPoolLayer& m) { return ops::maxpool2d(tape, h, m.window, m.stride); },
                       [&](const ReluLayer&) { return ops::relu(tape, h); },
                       [&](const SigmoidLayer&) { return ops::sigmoid(tape, h); },
                       [&](const DropoutLayer& d) {
                         if (!options.training || d.rate == 0.0) return h;
                         if (options.rng == nullptr) throw ContractError("training forward pass needs an RNG");
                         return ops::dropout(tape, h, d.rate, *options.rng);
                       },
                       [&](const FlattenLayer&) { return ops::flatten(tape, h); },
                       [&](const SoftmaxLayer&) { return ops::softmax(tape, h); },
                       [&](const ReshapeLayer& r) {
                         Shape s{batch};
                         s.insert(s.end(), r.shape.begin(), r.shape.end());
                         return ops::reshape(tape, h, s);
                       },
                   },
                   layer);
    if (options.capture_layer && *options.capture_layer == i) result.captured = h;
  }
  result.output = h;
  if (!result.logits.valid()) result.logits = h;
  return result;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed, Preprocessing preprocessing) {
  const auto shapes = spec.layer_shapes();
  std::mt19937_64 rng(seed);
  ParameterStore params;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Shape& in = i == 0 ? spec.input_shape : shapes[i - 1];
    std::size_t fan_in = 0, fan_out = 0;
    Shape w_shape;
    std::size_t units = 0;
    if (const auto* d = std::get_if<DenseLayer>(&spec.layers[i])) {
      fan_in = in[0];
      fan_out = d->units;
      w_shape = {in[0], d->units};
      units = d->units;
    } else if (const auto* c = std::get_if<ConvLayer>(&spec.layers[i])) {
      fan_in = c->kernel * c->kernel * in[2];
      fan_out = c->kernel * c->kernel * c->filters;
      w_shape = {c->kernel, c->kernel, in[2], c->filters};
      units = c->filters;
    } else {
      continue;
    }
    const double limit = feeds_relu(spec.layers, i) ? std::sqrt(6.0 / static_cast<double>(fan_in))
                                                     : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    LayerParameters p{Tensor(w_shape), Tensor({units}, 0.0), false};
    for (auto& v : p.weight.values()) v = dist(rng);
    params.layers.emplace(i, std::move(p));
  }
  return Model(spec, std::move(params), seed, preprocessing);
}

void check_input(const Shape& input_shape, const Tensor& x, const char* what) {
  if (x.rank() != input_shape.size() + 1 || !std::equal(input_shape.begin(), input_shape.end(), x.shape().begin() + 1))
    throw DimensionError(std::string(what) + ": input " + to_string(x.shape()) + " does not match [N]" +
                         to_string(input_shape));
}

ClassifierTarget::ClassifierTarget(const Model& classifier) : classifier_(&classifier) {
  if (!classifier.is_classifier()) throw ContractError(classifier.spec().name + " is not a classifier");
}

Var ClassifierTarget::logits(Tape& tape, Var x) const {
  return classifier_->bind(tape, false).forward(x).logits;
}

DefendedModel::DefendedModel(const Model& classifier, const Model& autoencoder)
    : classifier_(&classifier), autoencoder_(&autoencoder) {
  if (!classifier.is_classifier()) throw CompositionError(classifier.spec().name + " is not a classifier");
  if (autoencoder.output_shape() != classifier.input_shape())
    throw CompositionError("autoencoder output " + to_string(autoencoder.output_shape()) +
                           " does not match classifier input " + to_string(classifier.input_shape()));
  if (autoencoder.input_shape() != autoencoder.output_shape())
    throw CompositionError("autoencoder input " + to_string(autoencoder.input_shape()) + " differs from its output " +
                           to_string(autoencoder.output_shape()));
}

Var DefendedModel::logits(Tape& tape, Var x) const {
  Var recon = reconstruct_on(autoencoder_->bind(tape, false), tape, x);
  return classifier_->bind(tape, false).forward(recon).logits;
}

DefendedModel compose_defended(const Model& classifier, const Model& autoencoder) {
  return DefendedModel(classifier, autoencoder);
}

Var reconstruct_on(const BoundModel& ae, Tape& tape, Var x) {
  return ops::clamp(tape, ae.forward(x).output, kDataMin, kDataMax);
}

namespace {

template <typename Fn>
Tensor chunked(const Tensor& x, Fn fn) {
  std::vector<Tensor> parts;
  for (std::size_t begin = 0; begin < x.batch(); begin += kInferenceChunk) {
    const auto end = std::min(x.batch(), begin + kInferenceChunk);
    Tape tape;
    Var in = tape.constant(begin == 0 && end == x.batch() ? x : x.rows(begin, end));
    parts.push_back(tape.value(fn(tape, in)));
  }
  return parts.size() == 1 ? std::move(parts[0]) : concat_rows(parts);
}

}  // namespace

Tensor predict_logits(const Target& target, const Tensor& x) {
  check_input(target.input_shape(), x, "predict");
  return chunked(x, [&](Tape& tape, Var in) { return target.logits(tape, in); });
}

Tensor predict_proba(const Target& target, const Tensor& x) {
  check_input(target.input_shape(), x, "predict_proba");
  return chunked(x, [&](Tape& tape, Var in) { return ops::softmax(tape, target.logits(tape, in)); });
}

Tensor predict_proba(const Model& classifier, const Tensor& x) {
  check_input(classifier.input_shape(), x, "predict_proba");
  if (!classifier.is_classifier()) throw ContractError(classifier.spec().name + " is not a classifier");
  return chunked(x, [&](Tape& tape, Var in) { return classifier.bind(tape, false).forward(in).output; });
}

std::vector<int> predict_labels(const Target& target, const Tensor& x) { return argmax_rows(predict_proba(target, x)); }

std::vector<int> predict_labels(const Model& classifier, const Tensor& x) {
  return argmax_rows(predict_proba(classifier, x));
}

Tensor reconstruct(const Model& ae, const Tensor& x) {
  check_input(ae.input_shape(), x, "reconstruct");
  if (ae.output_shape() != ae.input_shape())
    throw DimensionError(ae.spec().name + ": output " + to_string(ae.output_shape()) + " differs from input " +
                         to_string(ae.input_shape()));
  return chunked(x, [&](Tape& tape, Var in) { return reconstruct_on(ae.bind(tape, false), tape, in); });
}

}  // namespace pmdef
