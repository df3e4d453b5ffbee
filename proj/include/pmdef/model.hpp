#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmdef/ops.hpp"
#include "pmdef/tape.hpp"

namespace pmdef {

struct DenseLayer {
  std::size_t units = 0;
};
struct ConvLayer {
  std::size_t filters = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  ops::Padding padding = ops::Padding::valid;
};
struct MaxPoolLayer {
  std::size_t window = 2;
  std::size_t stride = 2;
};
struct ReluLayer {};
struct SigmoidLayer {};
struct DropoutLayer {
  double rate = 0.0;
};
struct FlattenLayer {};
struct SoftmaxLayer {};
struct ReshapeLayer {
  Shape shape;
};

using LayerSpec = std::variant<DenseLayer, ConvLayer, MaxPoolLayer, ReluLayer, SigmoidLayer, DropoutLayer, FlattenLayer,
                               SoftmaxLayer, ReshapeLayer>;

std::string layer_name(const LayerSpec& layer);

// Declarative architecture. Shapes exclude the batch dimension.
struct ModelSpec {
  std::string name;
  Shape input_shape;
  std::vector<LayerSpec> layers;

  // Output shape after each layer; throws SpecError at the first break.
  std::vector<Shape> layer_shapes() const;
  Shape output_shape() const;
  bool is_classifier() const;
  std::size_t parameter_count() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&);
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

struct LayerParameters {
  Tensor weight;
  Tensor bias;
  bool frozen = false;
  friend bool operator==(const LayerParameters&, const LayerParameters&) = default;
};

// Learned weights keyed by layer index.
struct ParameterStore {
  std::map<std::size_t, LayerParameters> layers;

  std::size_t parameter_count() const;
  friend bool operator==(const ParameterStore&, const ParameterStore&) = default;
};

struct Preprocessing {
  // Per-image (x - mean) / max(std, 1e-6), applied at the model input.
  bool standardize_per_image = false;
  friend bool operator==(const Preprocessing&, const Preprocessing&) = default;
};

inline constexpr const char* kInitScheme = "he_uniform(relu)/glorot_uniform";

class BoundModel;

class Model {
 public:
  Model() = default;
  Model(ModelSpec spec, ParameterStore params, std::uint64_t seed, Preprocessing preprocessing = {});

  const ModelSpec& spec() const noexcept { return spec_; }
  const ParameterStore& parameters() const noexcept { return params_; }
  ParameterStore& parameters() noexcept { return params_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const Preprocessing& preprocessing() const noexcept { return preprocessing_; }
  const Shape& input_shape() const noexcept { return spec_.input_shape; }
  Shape output_shape() const { return spec_.output_shape(); }
  bool is_classifier() const { return spec_.is_classifier(); }
  std::size_t num_classes() const;

  void set_frozen(bool frozen);
  bool frozen() const;

  // Parameters in a fixed order: layers ascending, weight before bias.
  std::vector<Tensor*> trainable_tensors();

  BoundModel bind(Tape& tape, bool trainable) const;

 private:
  ModelSpec spec_;
  ParameterStore params_;
  std::uint64_t seed_ = 0;
  Preprocessing preprocessing_;
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;
  // Layer whose output is returned in ForwardResult::captured.
  std::optional<std::size_t> capture_layer;
};

struct ForwardResult {
  Var output;
  // Input of the final softmax for classifiers, otherwise the output.
  Var logits;
  Var captured;
};

// A model's parameters placed on a tape.
class BoundModel {
 public:
  BoundModel(const Model& model, Tape& tape, bool trainable);

  ForwardResult forward(Var x, const ForwardOptions& options = {}) const;
  // Vars of trainable parameters, ordered like Model::trainable_tensors().
  const std::vector<Var>& trainable_vars() const noexcept { return trainable_; }

 private:
  const Model* model_;
  Tape* tape_;
  std::map<std::size_t, std::pair<Var, Var>> vars_;
  std::vector<Var> trainable_;
};

// Deterministic in (spec, seed): He-uniform for weights feeding ReLU,
// Glorot-uniform otherwise, zero biases.
Model build_model(const ModelSpec& spec, std::uint64_t seed, Preprocessing preprocessing = {});

// Anything that maps an input batch to class logits differentiably.
class Target {
 public:
  virtual ~Target() = default;
  virtual Var logits(Tape& tape, Var x) const = 0;
  virtual const Shape& input_shape() const = 0;
  virtual std::size_t num_classes() const = 0;
};

class ClassifierTarget final : public Target {
 public:
  explicit ClassifierTarget(const Model& classifier);
  Var logits(Tape& tape, Var x) const override;
  const Shape& input_shape() const override { return classifier_->input_shape(); }
  std::size_t num_classes() const override { return classifier_->num_classes(); }

 private:
  const Model* classifier_;
};

// M(AE(x)), differentiable end to end.
class DefendedModel final : public Target {
 public:
  DefendedModel(const Model& classifier, const Model& autoencoder);
  Var logits(Tape& tape, Var x) const override;
  const Shape& input_shape() const override { return autoencoder_->input_shape(); }
  std::size_t num_classes() const override { return classifier_->num_classes(); }

 private:
  const Model* classifier_;
  const Model* autoencoder_;
};

DefendedModel compose_defended(const Model& classifier, const Model& autoencoder);

// Reconstruction clamped to the data domain, on a tape.
Var reconstruct_on(const BoundModel& ae, Tape& tape, Var x);

// Checks x is [N, input_shape...].
void check_input(const Shape& input_shape, const Tensor& x, const char* what);

Tensor predict_logits(const Target& target, const Tensor& x);
Tensor predict_proba(const Target& target, const Tensor& x);
Tensor predict_proba(const Model& classifier, const Tensor& x);
std::vector<int> predict_labels(const Target& target, const Tensor& x);
std::vector<int> predict_labels(const Model& classifier, const Tensor& x);

Tensor reconstruct(const Model& ae, const Tensor& x);

inline constexpr double kDataMin = 0.0;
inline constexpr double kDataMax = 1.0;
// Rows per tape in batched inference.
inline constexpr std::size_t kInferenceChunk = 256;

}  // namespace pmdef
