#include "support.hpp"

#include <atomic>
#include <unistd.h>

#include "pmdef/training.hpp"

namespace pmdef::test {

Tensor uniform(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(shape);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

Tensor random_distribution(std::size_t rows, std::size_t k, std::uint64_t seed) {
  Tensor t = uniform({rows, k}, seed, 0.05, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (double v : t.row(r)) s += v;
    for (auto& v : t.row(r)) v /= s;
  }
  return t;
}

Model linear_classifier(const Shape& input_shape, const Tensor& weight, const Tensor& bias) {
  ModelSpec spec{"linear", input_shape, {FlattenLayer{}, DenseLayer{bias.size()}, SoftmaxLayer{}}};
  ParameterStore params;
  params.layers[1] = LayerParameters{weight, bias, false};
  return Model(spec, params, 0);
}

Model identity_autoencoder(const Shape& input_shape) {
  const std::size_t n = shape_size(input_shape);
  ModelSpec spec{"identity", input_shape, {FlattenLayer{}, DenseLayer{n}, ReshapeLayer{input_shape}}};
  Tensor w({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) w[i * n + i] = 1.0;
  ParameterStore params;
  params.layers[1] = LayerParameters{w, Tensor({n}, 0.0), false};
  return Model(spec, params, 0);
}

ModelSpec mlp_classifier_spec(const Shape& input_shape, std::size_t hidden, std::size_t classes) {
  return {"mlp", input_shape,
          {FlattenLayer{}, DenseLayer{hidden}, ReluLayer{}, DenseLayer{classes}, SoftmaxLayer{}}};
}

ModelSpec mlp_autoencoder_spec(const Shape& input_shape, std::size_t hidden) {
  return {"ae",
          input_shape,
          {FlattenLayer{}, DenseLayer{hidden}, ReluLayer{}, DenseLayer{shape_size(input_shape)}, SigmoidLayer{},
           ReshapeLayer{input_shape}}};
}

ModelSpec conv_classifier_spec(const Shape& input_shape, std::size_t classes) {
  return {"cnn",
          input_shape,
          {ConvLayer{4, 3, 1, ops::Padding::same}, ReluLayer{}, MaxPoolLayer{2, 2}, FlattenLayer{}, DenseLayer{classes},
           SoftmaxLayer{}}};
}

const ToyTask& toy_task() {
  static const ToyTask task = [] {
    ToyTask t;
    t.train = synth_dataset(SynthKind::blobs, 240, 8, 4, 11);
    t.test = synth_dataset(SynthKind::blobs, 120, 8, 4, 12);
    t.classifier = build_model(mlp_classifier_spec({8, 8, 1}, 24, 4), 5);
    OptimizerConfig oc;
    oc.learning_rate = 0.01;
    oc.batch_size = 32;
    oc.epochs = 30;
    oc.seed = 5;
    train_classifier(t.classifier, t.train.images, t.train.labels, oc);
    t.classifier.set_frozen(true);
    return t;
  }();
  return task;
}

const Model& toy_defence() {
  static const Model ae = [] {
    const auto& t = toy_task();
    Model m = build_model(mlp_autoencoder_spec({8, 8, 1}, 32), 6);
    OptimizerConfig oc;
    oc.learning_rate = 0.005;
    oc.batch_size = 32;
    oc.epochs = 40;
    oc.seed = 6;
    train_defence(m, t.classifier, t.train.images, DefenceLossSpec{}, oc);
    return m;
  }();
  return ae;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("pmdef-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace pmdef::test
