#pragma once

#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pmdef/model.hpp"

namespace pmdef {

enum class ScoreMetric { kl, js };

struct ScoreOptions {
  ScoreMetric metric = ScoreMetric::kl;
  // Applied to M(x) only, as in the temperature-scaled training loss.
  std::optional<double> temperature;
};

ScoreMetric score_metric_from_string(const std::string& s);
std::string to_string(ScoreMetric metric);

// D(M(x) || M(AE(x))) per instance, from precomputed distributions.
std::vector<double> score_from_probabilities(const Tensor& p_original, const Tensor& p_reconstructed,
                                             const ScoreOptions& options = {});

std::vector<double> adversarial_score(const Model& classifier, const Model& autoencoder, const Tensor& x,
                                      const ScoreOptions& options = {});

inline constexpr double kNegativeInfinity = -std::numeric_limits<double>::infinity();
inline constexpr double kDefaultFalsePositiveRate = 0.05;

// Smallest normal score t with at most floor(eps * n) scores strictly above it;
// -inf when eps == 1.
double calibrate_threshold(std::span<const double> scores_normal, double false_positive_rate);

enum class VerdictSource { original, reconstructed, ensemble };
std::string to_string(VerdictSource source);

struct DefenceVerdict {
  double score = 0.0;
  double threshold = 0.0;
  bool flagged = false;
  int label = -1;
  VerdictSource source = VerdictSource::original;
};

std::vector<DefenceVerdict> detect_and_correct(const Model& classifier, const Model& autoencoder, const Tensor& x,
                                               double threshold, const ScoreOptions& options = {});

struct EnsembleMember {
  const Model* autoencoder = nullptr;
  double weight = 0.0;
};

struct EnsembleSpec {
  std::vector<EnsembleMember> members;

  double classifier_weight() const;
  void validate() const;
};

inline constexpr double kDefaultEnsembleShare = 0.8;

// Every member gets share / J, the classifier keeps 1 - share.
EnsembleSpec uniform_ensemble(std::span<const Model* const> autoencoders, double share = kDefaultEnsembleShare);

// Weighted vote from per-voter labels; ties go to the lowest class index.
int weighted_vote(std::span<const int> member_labels, std::span<const double> member_weights, int classifier_label,
                  double classifier_weight, std::size_t num_classes);

std::vector<int> ensemble_predict(const EnsembleSpec& spec, const Model& classifier, const Tensor& x);

// Flagged instances take the ensemble vote instead of a single AE's correction.
std::vector<DefenceVerdict> detect_and_correct_ensemble(const Model& classifier, const Model& scoring_autoencoder,
                                                        const EnsembleSpec& spec, const Tensor& x, double threshold,
                                                        const ScoreOptions& options = {});

// id,score,threshold,flagged,label,source
std::string verdicts_to_csv(std::span<const DefenceVerdict> verdicts);

}  // namespace pmdef
