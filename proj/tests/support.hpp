#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pmdef/dataset.hpp"
#include "pmdef/model.hpp"
#include "pmdef/tensor.hpp"

namespace pmdef::test {

Tensor uniform(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

// Rows drawn uniformly then normalised; entries stay >= 0.05 / k.
Tensor random_distribution(std::size_t rows, std::size_t k, std::uint64_t seed);

// flatten -> dense(K) -> softmax with the given weight (features x K) and bias.
Model linear_classifier(const Shape& input_shape, const Tensor& weight, const Tensor& bias);

// flatten -> dense (identity weights) -> reshape.
Model identity_autoencoder(const Shape& input_shape);

ModelSpec mlp_classifier_spec(const Shape& input_shape, std::size_t hidden, std::size_t classes);
ModelSpec mlp_autoencoder_spec(const Shape& input_shape, std::size_t hidden);
ModelSpec conv_classifier_spec(const Shape& input_shape, std::size_t classes);

// Classifier trained on a small blobs dataset, frozen.
struct ToyTask {
  Dataset train;
  Dataset test;
  Model classifier;
};
const ToyTask& toy_task();
// KL autoencoder trained on toy_task().
const Model& toy_defence();

class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace pmdef::test
