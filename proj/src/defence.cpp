#include "pmdef/defence.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pmdef/error.hpp"
#include "pmdef/ops.hpp"
#include "pmdef/training.hpp"

namespace pmdef {

namespace {

constexpr double kWeightTolerance = 1e-12;

double js_row(std::span<const double> p, std::span<const double> q) {
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * kl_row(p, m) + 0.5 * kl_row(q, m);
}

void check_distributions(const Tensor& p, const char* what) {
  try {
    validate_distribution_rows(p, what);
  } catch (const ValidationError& e) {
    throw ContractError(e.what());
  }
}

void check_pair(const Model& classifier, const Model& autoencoder) {
  if (!classifier.is_classifier()) throw CompositionError(classifier.spec().name + " is not a classifier");
  if (autoencoder.output_shape() != classifier.input_shape() || autoencoder.input_shape() != classifier.input_shape())
    throw CompositionError("autoencoder " + autoencoder.spec().name + " does not map the classifier input space");
}

}  // namespace

ScoreMetric score_metric_from_string(const std::string& s) {
  if (s == "kl") return ScoreMetric::kl;
  if (s == "js") return ScoreMetric::js;
  throw ConfigError("unknown score metric '" + s + "'");
}

std::string to_string(ScoreMetric metric) { return metric == ScoreMetric::kl ? "kl" : "js"; }

std::vector<double> score_from_probabilities(const Tensor& p_original, const Tensor& p_reconstructed,
                                             const ScoreOptions& options) {
  if (p_original.shape() != p_reconstructed.shape())
    throw DimensionError("score: distributions " + to_string(p_original.shape()) + " and " +
                         to_string(p_reconstructed.shape()) + " differ");
  check_distributions(p_original, "M(x)");
  check_distributions(p_reconstructed, "M(AE(x))");
  const Tensor p = options.temperature ? temperature_scale(p_original, *options.temperature) : p_original;
  const std::size_t k = p.shape().back();
  std::vector<double> out(p.size() / k);
  for (std::size_t r = 0; r < out.size(); ++r) {
    auto a = p.values().subspan(r * k, k);
    auto b = p_reconstructed.values().subspan(r * k, k);
    out[r] = options.metric == ScoreMetric::kl ? kl_row(a, b) : js_row(a, b);
  }
  return out;
}

std::vector<double> adversarial_score(const Model& classifier, const Model& autoencoder, const Tensor& x,
                                      const ScoreOptions& options) {
  check_pair(classifier, autoencoder);
  return score_from_probabilities(predict_proba(classifier, x), predict_proba(classifier, reconstruct(autoencoder, x)),
                                  options);
}

double calibrate_threshold(std::span<const double> scores_normal, double false_positive_rate) {
  if (scores_normal.empty()) throw DataError("calibrate_threshold: no scores");
  if (!(false_positive_rate >= 0.0 && false_positive_rate <= 1.0))
    throw ParameterError("false positive rate must be in [0, 1]");
  if (false_positive_rate == 1.0) return kNegativeInfinity;
  std::vector<double> sorted(scores_normal.begin(), scores_normal.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const auto allowed =
      std::min(n - 1, static_cast<std::size_t>(std::floor(false_positive_rate * static_cast<double>(n) + 1e-9)));
  return sorted[n - 1 - allowed];
}

std::string to_string(VerdictSource source) {
  switch (source) {
    case VerdictSource::original:
      return "original";
    case VerdictSource::reconstructed:
      return "reconstructed";
    case VerdictSource::ensemble:
      return "ensemble";
  }
  return "original";
}

std::vector<DefenceVerdict> detect_and_correct(const Model& classifier, const Model& autoencoder, const Tensor& x,
                                               double threshold, const ScoreOptions& options) {
  check_pair(classifier, autoencoder);
  const Tensor p = predict_proba(classifier, x);
  const Tensor pr = predict_proba(classifier, reconstruct(autoencoder, x));
  const std::vector<double> scores = score_from_probabilities(p, pr, options);
  const std::vector<int> plain = argmax_rows(p), corrected = argmax_rows(pr);
  std::vector<DefenceVerdict> out(scores.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& v = out[i];
    v.score = scores[i];
    v.threshold = threshold;
    v.flagged = scores[i] > threshold;
    v.label = v.flagged ? corrected[i] : plain[i];
    v.source = v.flagged ? VerdictSource::reconstructed : VerdictSource::original;
  }
  return out;
}

double EnsembleSpec::classifier_weight() const {
  double total = 0.0;
  for (const auto& m : members) total += m.weight;
  return std::max(0.0, 1.0 - total);
}

void EnsembleSpec::validate() const {
  double total = 0.0;
  for (const auto& m : members) {
    if (m.autoencoder == nullptr) throw ConfigError("ensemble member without an autoencoder");
    if (!(m.weight >= 0.0) || !std::isfinite(m.weight)) throw ConfigError("ensemble weights must be non-negative");
    total += m.weight;
  }
  if (total > 1.0 + kWeightTolerance) throw ConfigError("ensemble weights sum to more than 1");
  if (members.empty() && classifier_weight() <= 0.0) throw ConfigError("empty ensemble with zero classifier weight");
  if (total + classifier_weight() <= 0.0) throw ConfigError("all ensemble weights are zero");
}

EnsembleSpec uniform_ensemble(std::span<const Model* const> autoencoders, double share) {
  if (!(share >= 0.0 && share <= 1.0)) throw ConfigError("ensemble share must be in [0, 1]");
  EnsembleSpec spec;
  for (const Model* ae : autoencoders)
    spec.members.push_back({ae, share / static_cast<double>(autoencoders.size())});
  return spec;
}

int weighted_vote(std::span<const int> member_labels, std::span<const double> member_weights, int classifier_label,
                  double classifier_weight, std::size_t num_classes) {
  std::vector<double> votes(num_classes, 0.0);
  for (std::size_t j = 0; j < member_labels.size(); ++j) votes.at(static_cast<std::size_t>(member_labels[j])) += member_weights[j];
  votes.at(static_cast<std::size_t>(classifier_label)) += classifier_weight;
  std::size_t best = 0;
  for (std::size_t c = 1; c < num_classes; ++c)
    if (votes[c] > votes[best] + kWeightTolerance) best = c;
  return static_cast<int>(best);
}

std::vector<int> ensemble_predict(const EnsembleSpec& spec, const Model& classifier, const Tensor& x) {
  spec.validate();
  for (const auto& m : spec.members) check_pair(classifier, *m.autoencoder);
  const std::vector<int> plain = predict_labels(classifier, x);
  std::vector<std::vector<int>> member_labels;
  std::vector<double> weights;
  for (const auto& m : spec.members) {
    member_labels.push_back(predict_labels(classifier, reconstruct(*m.autoencoder, x)));
    weights.push_back(m.weight);
  }
  const double cw = spec.classifier_weight();
  std::vector<int> out(plain.size());
  std::vector<int> row(spec.members.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = member_labels[j][i];
    out[i] = weighted_vote(row, weights, plain[i], cw, classifier.num_classes());
  }
  return out;
}

std::vector<DefenceVerdict> detect_and_correct_ensemble(const Model& classifier, const Model& scoring_autoencoder,
                                                        const EnsembleSpec& spec, const Tensor& x, double threshold,
                                                        const ScoreOptions& options) {
  std::vector<DefenceVerdict> out = detect_and_correct(classifier, scoring_autoencoder, x, threshold, options);
  const std::vector<int> voted = ensemble_predict(spec, classifier, x);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!out[i].flagged) continue;
    out[i].label = voted[i];
    out[i].source = VerdictSource::ensemble;
  }
  return out;
}

std::string verdicts_to_csv(std::span<const DefenceVerdict> verdicts) {
  std::ostringstream os;
  os.precision(17);
  os << "id,score,threshold,flagged,label,source\n";
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    const auto& v = verdicts[i];
    os << i << ',' << v.score << ',' << v.threshold << ',' << (v.flagged ? 1 : 0) << ',' << v.label << ','
       << to_string(v.source) << '\n';
  }
  return os.str();
}

}  // namespace pmdef
