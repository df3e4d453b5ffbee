#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmdef/model.hpp"
#include "pmdef/optimizer.hpp"
#include "pmdef/probe.hpp"

namespace pmdef {

enum class DefenceLossKind { kl, mse, kl_temperature, kl_hidden };

std::string to_string(DefenceLossKind kind);
DefenceLossKind defence_loss_kind_from_string(const std::string& s);

struct DefenceLossSpec {
  DefenceLossKind kind = DefenceLossKind::kl;
  // Applied to the target M(x) only (kind == kl_temperature).
  double temperature = 1.0;
  // Weight of the hidden-layer term (kind == kl_hidden).
  double hidden_weight = 1.0;
  std::size_t probe_layer = 0;
  std::size_t probe_dim = 0;

  void validate() const;
};

nlohmann::json to_json(const DefenceLossSpec& spec);
DefenceLossSpec defence_loss_spec_from_json(const nlohmann::json& j);

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainReport {
  // Mean per-instance loss over the whole set before the first update.
  double initial_loss = 0.0;
  std::vector<EpochRecord> epochs;
  double final_loss = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  nlohmann::json loss;

  // One JSON object per epoch.
  std::string to_jsonl() const;
};

struct TrainCallbacks {
  std::function<void(const EpochRecord&, const Model&)> on_epoch_end;
};

// M(x)^(1/T) renormalised per row.
Tensor temperature_scale(const Tensor& p, double temperature);

// Mean cross-entropy of the classifier on a batch.
Var classifier_objective(Tape& tape, const BoundModel& classifier, Var x, std::span<const int> labels,
                         const ForwardOptions& options = {});

struct ProbeVars {
  std::size_t source_layer = 0;
  Var weight;
  Var bias;
};

// Batch defence loss. `targets` is M(x), temperature scaled for
// kl_temperature, and unused for mse. `probe` is required for kl_hidden.
Var defence_objective(Tape& tape, const BoundModel& autoencoder, const BoundModel& classifier, Var x, Var targets,
                      const DefenceLossSpec& loss, const ProbeVars* probe = nullptr, const ForwardOptions& options = {});

// Cross-entropy training of a classifier. Dropout is active, the rest of the
// model is updated in place.
TrainReport train_classifier(Model& model, const Tensor& x, std::span<const int> labels,
                             const OptimizerConfig& config, const TrainCallbacks& callbacks = {});

// Unsupervised defence training. The classifier must be frozen and is never
// modified. For kl_hidden, `probe` is trained jointly with the autoencoder.
TrainReport train_defence(Model& autoencoder, const Model& classifier, const Tensor& x, const DefenceLossSpec& loss,
                          const OptimizerConfig& config, HiddenProbe* probe = nullptr,
                          const TrainCallbacks& callbacks = {});

double classification_accuracy(const Model& classifier, const Tensor& x, std::span<const int> labels);

}  // namespace pmdef
