#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmdef/attacks.hpp"
#include "pmdef/dataset.hpp"
#include "pmdef/defence.hpp"
#include "pmdef/evaluation.hpp"
#include "pmdef/model.hpp"
#include "pmdef/optimizer.hpp"
#include "pmdef/training.hpp"

namespace pmdef {

struct DatasetRef {
  // "idx", "cifar" or "synthetic".
  std::string kind = "synthetic";
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::vector<std::filesystem::path> cifar_train, cifar_test;
  SynthKind generator = SynthKind::blobs;
  std::size_t train_size = 4000;
  std::size_t test_size = 1000;
  std::size_t image_size = 14;
  std::size_t num_classes = 10;
  // Optional prefix of each split actually used.
  std::optional<std::size_t> train_limit, test_limit;
};

struct ExperimentConfig {
  DatasetRef dataset;
  ModelSpec classifier;
  ModelSpec autoencoder;
  OptimizerConfig classifier_training;
  OptimizerConfig defence_training;
  DefenceLossSpec defence_loss;
  std::vector<AttackConfig> attacks;
  // Number of test instances attacked (all when absent).
  std::optional<std::size_t> attack_limit;
  double false_positive_rate = kDefaultFalsePositiveRate;
  ScoreOptions score;
  std::vector<CorruptionKind> drift_kinds{std::begin(kAllCorruptions), std::end(kAllCorruptions)};
  std::vector<int> drift_severities{0, 1, 2, 3, 4, 5};
  std::size_t checkpoint_every = 10;
  // Epochs (1-based) of the defence checkpoints that form the ensemble.
  std::vector<std::size_t> ensemble_epochs;
  double ensemble_share = kDefaultEnsembleShare;
  std::filesystem::path output_dir = "pmdef-out";
  std::uint64_t seed = 0;
  // The document as loaded, echoed into manifests.
  nlohmann::json source;
};

// Relative paths resolve against base_dir; referenced files must exist.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                             std::optional<std::uint64_t> seed_override = std::nullopt);
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        std::optional<std::uint64_t> seed_override = std::nullopt);

Dataset load_train_split(const ExperimentConfig& config);
Dataset load_test_split(const ExperimentConfig& config);

}  // namespace pmdef
