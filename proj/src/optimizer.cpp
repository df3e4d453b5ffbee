#include "pmdef/optimizer.hpp"

#include <cmath>

#include "pmdef/error.hpp"

namespace pmdef {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ParameterError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must be in [0, 1)");
  if (batch_size < 1) throw ParameterError("batch size must be at least 1");
  if (kind == OptimizerKind::adam) {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ParameterError("adam betas must be in [0, 1)");
    if (!(epsilon > 0.0)) throw ParameterError("adam epsilon must be positive");
  }
  for (const auto& [epoch, factor] : schedule)
    if (!(factor > 0.0)) throw ParameterError("schedule factors must be positive");
}

double OptimizerConfig::learning_rate_at(std::size_t epoch) const {
  double lr = learning_rate;
  for (const auto& [start, factor] : schedule)
    if (epoch >= start) lr *= factor;
  return lr;
}

nlohmann::json to_json(const OptimizerConfig& c) {
  nlohmann::json schedule = nlohmann::json::array();
  for (const auto& [epoch, factor] : c.schedule) schedule.push_back({epoch, factor});
  return {{"kind", c.kind == OptimizerKind::adam ? "adam" : "sgd_momentum"},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"momentum", c.momentum},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"schedule", schedule}};
}

OptimizerConfig optimizer_config_from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  try {
    const auto kind = j.value("kind", std::string("adam"));
    if (kind == "adam")
      c.kind = OptimizerKind::adam;
    else if (kind == "sgd_momentum")
      c.kind = OptimizerKind::sgd_momentum;
    else
      throw ConfigError("unknown optimizer kind '" + kind + "'");
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.momentum = j.value("momentum", c.momentum);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    if (j.contains("schedule"))
      for (const auto& entry : j.at("schedule"))
        c.schedule.emplace_back(entry.at(0).get<std::size_t>(), entry.at(1).get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed optimizer config: ") + e.what());
  }
  c.validate();
  return c;
}

Optimizer::Optimizer(const OptimizerConfig& config) : config_(config) { config_.validate(); }

void Optimizer::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, double lr) {
  if (params.size() != grads.size()) throw ContractError("optimizer: parameter and gradient counts differ");
  if (first_.empty()) {
    for (const Tensor* p : params) {
      first_.emplace_back(p->shape(), 0.0);
      if (config_.kind == OptimizerKind::adam) second_.emplace_back(p->shape(), 0.0);
    }
  }
  if (first_.size() != params.size()) throw ContractError("optimizer: parameter list changed between steps");
  ++steps_;

  if (config_.kind == OptimizerKind::adam) {
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = *params[k];
      const Tensor& g = *grads[k];
      Tensor& m = first_[k];
      Tensor& v = second_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
      }
    }
  } else {
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = *params[k];
      const Tensor& g = *grads[k];
      Tensor& vel = first_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        vel[i] = config_.momentum * vel[i] - lr * g[i];
        p[i] += vel[i];
      }
    }
  }
}

}  // namespace pmdef
