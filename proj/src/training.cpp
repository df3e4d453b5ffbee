#include "pmdef/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "pmdef/error.hpp"
#include "pmdef/rng.hpp"

namespace pmdef {
namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t begin = 0; begin < n; begin += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, begin + batch_size)));
  return batches;
}

std::vector<const Tensor*> gradients(const Tape& tape, const std::vector<Var>& vars) {
  std::vector<const Tensor*> out;
  out.reserve(vars.size());
  for (Var v : vars) out.push_back(&tape.grad(v));
  return out;
}

void check_loss(double loss, std::size_t epoch) {
  if (!std::isfinite(loss))
    throw DivergenceError("loss became non-finite in epoch " + std::to_string(epoch), static_cast<int>(epoch));
}

// Mean per-instance loss over `n` rows evaluated in chunks by `batch_loss`,
// which returns the batch mean.
template <typename Fn>
double dataset_loss(std::size_t n, Fn batch_loss) {
  double total = 0.0;
  for (std::size_t begin = 0; begin < n; begin += kInferenceChunk) {
    const auto end = std::min(n, begin + kInferenceChunk);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    total += batch_loss(idx) * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(n);
}

}  // namespace

std::string to_string(DefenceLossKind kind) {
  switch (kind) {
    case DefenceLossKind::kl: return "kl";
    case DefenceLossKind::mse: return "mse";
    case DefenceLossKind::kl_temperature: return "kl_temperature";
    case DefenceLossKind::kl_hidden: return "kl_hidden";
  }
  return "kl";
}

DefenceLossKind defence_loss_kind_from_string(const std::string& s) {
  if (s == "kl") return DefenceLossKind::kl;
  if (s == "mse") return DefenceLossKind::mse;
  if (s == "kl_temperature") return DefenceLossKind::kl_temperature;
  if (s == "kl_hidden") return DefenceLossKind::kl_hidden;
  throw ConfigError("unknown defence loss kind '" + s + "'");
}

void DefenceLossSpec::validate() const {
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
  if (!(hidden_weight >= 0.0)) throw ParameterError("hidden-layer weight must be non-negative");
  if (kind == DefenceLossKind::kl_hidden && probe_dim == 0)
    throw ConfigError("kl_hidden loss needs a positive probe dimension");
}

nlohmann::json to_json(const DefenceLossSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"temperature", s.temperature},
          {"hidden_weight", s.hidden_weight},
          {"probe_layer", s.probe_layer},
          {"probe_dim", s.probe_dim}};
}

DefenceLossSpec defence_loss_spec_from_json(const nlohmann::json& j) {
  DefenceLossSpec s;
  try {
    s.kind = defence_loss_kind_from_string(j.value("kind", std::string("kl")));
    s.temperature = j.value("temperature", s.temperature);
    s.hidden_weight = j.value("hidden_weight", s.hidden_weight);
    s.probe_layer = j.value("probe_layer", s.probe_layer);
    s.probe_dim = j.value("probe_dim", s.probe_dim);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed defence loss: ") + e.what());
  }
  s.validate();
  return s;
}

std::string TrainReport::to_jsonl() const {
  std::ostringstream out;
  for (const auto& e : epochs) {
    nlohmann::json j = {{"epoch", e.epoch},           {"mean_loss", e.mean_loss}, {"learning_rate", e.learning_rate},
                        {"initial_loss", initial_loss}, {"seed", seed},           {"loss", loss}};
    if (&e == &epochs.back()) {
      j["final_loss"] = final_loss;
      j["wall_seconds"] = wall_seconds;
    }
    out << j.dump() << '\n';
  }
  return out.str();
}

Tensor temperature_scale(const Tensor& p, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ParameterError("temperature must be positive");
  validate_distribution_rows(p, "temperature_scale");
  const auto k = p.shape().back();
  Tensor out(p.shape(), 0.0);
  std::vector<double> logs(k);
  for (std::size_t r = 0; r < p.size() / k; ++r) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) {
      const double v = p[r * k + i];
      logs[i] = v > 0.0 ? std::log(v) / temperature : -std::numeric_limits<double>::infinity();
      top = std::max(top, logs[i]);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) total += (out[r * k + i] = std::isinf(logs[i]) ? 0.0 : std::exp(logs[i] - top));
    for (std::size_t i = 0; i < k; ++i) out[r * k + i] /= total;
  }
  return out;
}

double classification_accuracy(const Model& classifier, const Tensor& x, std::span<const int> labels) {
  const auto predicted = predict_labels(classifier, x);
  if (predicted.size() != labels.size()) throw DimensionError("accuracy: label count differs from batch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

TrainReport train_classifier(Model& model, const Tensor& x, std::span<const int> labels,
                             const OptimizerConfig& config, const TrainCallbacks& callbacks) {
  config.validate();
  if (!model.is_classifier()) throw ContractError(model.spec().name + " is not a classifier");
  check_input(model.input_shape(), x, "train_classifier");
  if (labels.size() != x.batch()) throw DataError("train_classifier: label count differs from instance count");
  const auto classes = model.num_classes();
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw DataError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");

  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = config.seed;
  report.loss = {{"kind", "cross_entropy"}};
  std::mt19937_64 shuffle_rng(derive_seed(config.seed, "shuffle"));
  std::mt19937_64 dropout_rng(derive_seed(config.seed, "dropout"));

  auto batch_loss = [&](const std::vector<std::size_t>& idx, bool training, Tape& tape, const BoundModel& bound) {
    std::vector<int> y(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) y[i] = labels[idx[i]];
    ForwardOptions options;
    options.training = training;
    options.rng = &dropout_rng;
    return classifier_objective(tape, bound, tape.constant(x.gather_rows(idx)), y, options);
  };

  report.initial_loss = dataset_loss(x.batch(), [&](const std::vector<std::size_t>& idx) {
    Tape tape;
    return tape.value(batch_loss(idx, false, tape, model.bind(tape, false))).item();
  });
  report.final_loss = report.initial_loss;

  Optimizer optimizer(config);
  auto params = model.trainable_tensors();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.learning_rate_at(epoch);
    double total = 0.0;
    for (const auto& idx : epoch_batches(x.batch(), config.batch_size, shuffle_rng)) {
      Tape tape;
      auto bound = model.bind(tape, true);
      Var loss;
      try {
        loss = batch_loss(idx, true, tape, bound);
      } catch (const EvaluationError& e) {
        throw DivergenceError(std::string(e.what()) + " in epoch " + std::to_string(epoch), static_cast<int>(epoch));
      }
      const double value = tape.value(loss).item();
      check_loss(value, epoch);
      tape.backward(loss);
      optimizer.step(params, gradients(tape, bound.trainable_vars()), lr);
      total += value * static_cast<double>(idx.size());
    }
    EpochRecord record{epoch, total / static_cast<double>(x.batch()), lr};
    report.epochs.push_back(record);
    report.final_loss = record.mean_loss;
    if (callbacks.on_epoch_end) callbacks.on_epoch_end(record, model);
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

Var defence_objective(Tape& tape, const BoundModel& ae, const BoundModel& classifier, Var x, Var targets,
                      const DefenceLossSpec& loss, const ProbeVars* probe, const ForwardOptions& options) {
  Var recon = ops::clamp(tape, ae.forward(x, options).output, kDataMin, kDataMax);
  if (loss.kind == DefenceLossKind::mse) return ops::mean(tape, ops::square(tape, ops::sub(tape, recon, x)));
  Var total = ops::kl_divergence(tape, targets, classifier.forward(recon).output);
  if (loss.kind != DefenceLossKind::kl_hidden) return total;
  if (probe == nullptr) throw ConfigError("kl_hidden loss needs a hidden probe");
  Var hp = probe_distribution(tape, classifier, probe->source_layer, probe->weight, probe->bias, x);
  Var hq = probe_distribution(tape, classifier, probe->source_layer, probe->weight, probe->bias, recon);
  return ops::add(tape, total, ops::scale(tape, ops::kl_divergence(tape, hp, hq), loss.hidden_weight));
}

Var classifier_objective(Tape& tape, const BoundModel& classifier, Var x, std::span<const int> labels,
                         const ForwardOptions& options) {
  return ops::cross_entropy(tape, classifier.forward(x, options).logits, labels);
}

TrainReport train_defence(Model& autoencoder, const Model& classifier, const Tensor& x, const DefenceLossSpec& loss,
                          const OptimizerConfig& config, HiddenProbe* probe, const TrainCallbacks& callbacks) {
  config.validate();
  loss.validate();
  if (!classifier.frozen()) throw ContractError("train_defence: classifier parameters must be frozen");
  if (!classifier.is_classifier()) throw ContractError(classifier.spec().name + " is not a classifier");
  if (autoencoder.output_shape() != classifier.input_shape() || autoencoder.input_shape() != classifier.input_shape())
    throw CompositionError("autoencoder " + to_string(autoencoder.input_shape()) + " -> " +
                           to_string(autoencoder.output_shape()) + " does not fit classifier input " +
                           to_string(classifier.input_shape()));
  check_input(autoencoder.input_shape(), x, "train_defence");
  if (loss.kind == DefenceLossKind::kl_hidden) {
    if (probe == nullptr) throw ConfigError("kl_hidden loss needs a hidden probe");
    if (probe->source_layer >= classifier.spec().layers.size())
      throw ConfigError("hidden probe source layer " + std::to_string(probe->source_layer) + " does not exist");
  }

  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = config.seed;
  report.loss = to_json(loss);
  std::mt19937_64 shuffle_rng(derive_seed(config.seed, "shuffle"));
  std::mt19937_64 dropout_rng(derive_seed(config.seed, "dropout"));

  // The classifier is fixed, so its predictions on x are computed once.
  Tensor targets;
  if (loss.kind != DefenceLossKind::mse) {
    targets = predict_proba(classifier, x);
    if (loss.kind == DefenceLossKind::kl_temperature) targets = temperature_scale(targets, loss.temperature);
  }

  struct Step {
    Var loss;
    std::vector<Var> trainable;
  };
  auto build = [&](Tape& tape, const std::vector<std::size_t>& idx, bool training) {
    auto ae = autoencoder.bind(tape, training);
    auto clf = classifier.bind(tape, false);
    Step step{Var{}, ae.trainable_vars()};
    ForwardOptions options;
    options.training = training;
    options.rng = &dropout_rng;
    ProbeVars pv;
    if (loss.kind == DefenceLossKind::kl_hidden) {
      pv = {probe->source_layer, tape.leaf(probe->weight, training), tape.leaf(probe->bias, training)};
      if (training) {
        step.trainable.push_back(pv.weight);
        step.trainable.push_back(pv.bias);
      }
    }
    Var p = loss.kind == DefenceLossKind::mse ? Var{} : tape.constant(targets.gather_rows(idx));
    step.loss = defence_objective(tape, ae, clf, tape.constant(x.gather_rows(idx)), p, loss,
                                  loss.kind == DefenceLossKind::kl_hidden ? &pv : nullptr, options);
    return step;
  };

  report.initial_loss = dataset_loss(x.batch(), [&](const std::vector<std::size_t>& idx) {
    Tape tape;
    return tape.value(build(tape, idx, false).loss).item();
  });
  report.final_loss = report.initial_loss;

  Optimizer optimizer(config);
  auto params = autoencoder.trainable_tensors();
  if (loss.kind == DefenceLossKind::kl_hidden) {
    params.push_back(&probe->weight);
    params.push_back(&probe->bias);
  }
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.learning_rate_at(epoch);
    double total = 0.0;
    for (const auto& idx : epoch_batches(x.batch(), config.batch_size, shuffle_rng)) {
      Tape tape;
      Step step;
      try {
        step = build(tape, idx, true);
      } catch (const EvaluationError& e) {
        throw DivergenceError(std::string(e.what()) + " in epoch " + std::to_string(epoch), static_cast<int>(epoch));
      }
      const double value = tape.value(step.loss).item();
      check_loss(value, epoch);
      tape.backward(step.loss);
      optimizer.step(params, gradients(tape, step.trainable), lr);
      total += value * static_cast<double>(idx.size());
    }
    EpochRecord record{epoch, total / static_cast<double>(x.batch()), lr};
    report.epochs.push_back(record);
    report.final_loss = record.mean_loss;
    if (callbacks.on_epoch_end) callbacks.on_epoch_end(record, autoencoder);
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace pmdef
