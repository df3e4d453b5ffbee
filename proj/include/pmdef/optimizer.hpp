#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmdef/tensor.hpp"

namespace pmdef {

enum class OptimizerKind { adam, sgd_momentum };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.9;
  std::size_t batch_size = 128;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  // (epoch, factor): from that 0-based epoch on, the rate is multiplied by factor.
  std::vector<std::pair<std::size_t, double>> schedule;

  void validate() const;
  double learning_rate_at(std::size_t epoch) const;
};

nlohmann::json to_json(const OptimizerConfig& config);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j);

// First-order update rule over a fixed list of parameter tensors. State is
// created lazily on the first step and lives only as long as the optimizer.
class Optimizer {
 public:
  explicit Optimizer(const OptimizerConfig& config);
  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, double learning_rate);

 private:
  OptimizerConfig config_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::uint64_t steps_ = 0;
};

}  // namespace pmdef
