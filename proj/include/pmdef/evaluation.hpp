#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmdef/attacks.hpp"
#include "pmdef/dataset.hpp"
#include "pmdef/defence.hpp"
#include "pmdef/model.hpp"

namespace pmdef {

struct RocCurve {
  // Points from (0,0) to (1,1); thresholds[i] is the score cut (score >= cut
  // counts as adversarial) that produced point i + 1.
  std::vector<double> fpr;
  std::vector<double> tpr;
  std::vector<double> thresholds;
  double auc = 0.0;
};

nlohmann::json to_json(const RocCurve& roc);

// Adversarial instances are the positive class.
RocCurve roc_auc(std::span<const double> scores_normal, std::span<const double> scores_adversarial);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

// P(K > lambda) for the limiting Kolmogorov distribution.
double kolmogorov_survival(double lambda);

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

enum class CorruptionKind { gaussian_noise, blur, brightness, contrast };

CorruptionKind corruption_kind_from_string(const std::string& s);
std::string to_string(CorruptionKind kind);
inline constexpr CorruptionKind kAllCorruptions[] = {CorruptionKind::gaussian_noise, CorruptionKind::blur,
                                                     CorruptionKind::brightness, CorruptionKind::contrast};

// Noise sigma, blur radius, brightness shift or contrast factor.
double corruption_parameter(CorruptionKind kind, int severity);

// x is [N, H, W, C] in [0,1]; severity in 1..5.
Tensor corrupt_dataset(const Tensor& x, CorruptionKind kind, int severity, std::uint64_t seed);

struct GroupStats {
  std::size_t size = 0;
  std::optional<double> mean;
  std::optional<double> stddev;
};

struct DriftRow {
  // "all" pools every requested kind at this severity; "none" is the clean set.
  std::string kind;
  int severity = 0;
  std::size_t instances = 0;
  double accuracy = 0.0;
  // Correct on clean data, wrong after corruption.
  GroupStats harmful;
  // Prediction unchanged by the corruption.
  GroupStats not_harmful;
  // Any other change (wrong before, or wrong to a different wrong class).
  GroupStats other;
  std::optional<KsResult> ks;
};

struct DriftReport {
  std::vector<DriftRow> rows;

  const DriftRow* find(const std::string& kind, int severity) const;
  std::string to_csv() const;
};

nlohmann::json to_json(const DriftReport& report);

DriftReport drift_report(const Model& classifier, const Model& autoencoder, const Dataset& clean,
                         std::span<const CorruptionKind> kinds, std::span<const int> severities, std::uint64_t seed,
                         const ScoreOptions& options = {});

struct DefenceColumn {
  std::string name;
  const Model* autoencoder = nullptr;
  // Adds a detection-gated column using this threshold.
  std::optional<double> threshold;
};

struct AttackSet {
  std::string name;
  const AdversarialBatch* batch = nullptr;
};

struct AccuracyTable {
  std::vector<std::string> columns;
  std::vector<std::string> rows;
  std::vector<std::vector<double>> values;

  double at(const std::string& row, const std::string& column) const;
  std::string to_csv() const;
};

// Rows: "none" (clean data) then one per attack. Columns: No Attack, No
// Defence, then one correction column (t = -inf) per defence and a gated
// column for defences that carry a threshold.
AccuracyTable accuracy_report(const Model& classifier, std::span<const DefenceColumn> defences, const Dataset& clean,
                              std::span<const AttackSet> attacks, const ScoreOptions& options = {});

double accuracy(std::span<const int> predicted, std::span<const int> labels);

}  // namespace pmdef
