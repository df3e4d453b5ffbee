#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmdef/model.hpp"

namespace pmdef {

enum class TargetMode { grey_box, white_box };
// Untargeted attacks move away from this label.
enum class LabelSource { predicted, true_labels };

struct FgsmConfig {
  double epsilon = 0.1;
};

struct SlideConfig {
  double percentile = 80.0;
  double step = 0.05;
  std::size_t steps = 10;
  double l1_bound = 0.1;
};

struct CwConfig {
  double c_init = 100.0;
  std::size_t binary_steps = 7;
  std::size_t max_iter = 200;
  double learning_rate = 0.1;
  double confidence = 0.0;
};

using AttackParams = std::variant<FgsmConfig, SlideConfig, CwConfig>;

struct AttackConfig {
  std::string name;
  AttackParams params;
  TargetMode mode = TargetMode::grey_box;
  LabelSource label_source = LabelSource::predicted;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const AttackConfig& config);
AttackConfig attack_config_from_json(const nlohmann::json& j);
std::string attack_kind(const AttackConfig& config);

struct AttackDiagnostics {
  // FGSM: epsilon * sign(g) before clipping.
  Tensor raw_perturbation;
  // SLIDE, per instance and iteration: nonzero direction entries (0 when the
  // iteration was skipped) and ||delta||_1 after the projection and clip.
  std::vector<std::vector<std::size_t>> direction_nonzeros;
  std::vector<std::vector<double>> iterate_l1;
  std::vector<std::size_t> skipped_iterations;
  // C&W: instances whose objective became non-finite, and the final constant.
  std::vector<std::uint8_t> non_finite;
  std::vector<double> final_constant;
};

struct AdversarialBatch {
  AttackConfig config;
  Tensor originals;
  Tensor adversarials;
  std::vector<int> labels;
  std::vector<int> original_predictions;
  std::vector<int> adversarial_predictions;
  std::vector<std::uint8_t> success;
  std::vector<double> l1;
  std::vector<double> l2;
  std::vector<double> linf;
  AttackDiagnostics diagnostics;

  std::size_t size() const { return labels.size(); }
  double success_rate() const;
};

// sign(0) = 0.
double sign(double v);

// Fills predictions (w.r.t. target), success mask and norms from originals
// and adversarials.
void finalize_batch(const Target& target, AdversarialBatch& batch);

// y: labels the attack moves away from (one per instance).
AdversarialBatch fgsm(const Target& target, const Tensor& x, std::span<const int> y, double epsilon);
AdversarialBatch slide(const Target& target, const Tensor& x, std::span<const int> y, const SlideConfig& config);
struct CwTerms {
  Var adversarial;  // (tanh(w) + 1) / 2
  Var squared_l2;   // [N]
  Var logits;
  Var margin;       // Z_y - max_{j != y} Z_j, [N]
  Var objective;    // squared_l2 + c * max(margin, -confidence), [N]
};

// Per-row C&W objective in tanh space; c is [N].
CwTerms cw_objective(Tape& tape, const Target& target, Var w, Var x, std::span<const int> y, Var c,
                     double confidence);

AdversarialBatch cw_l2(const Target& target, const Tensor& x, std::span<const int> y, const CwConfig& config);
AdversarialBatch cw_l2(const Target& target, const Tensor& x, const CwConfig& config);

// Dispatches on config.params; true_labels are kept in the batch and used as
// the attack label when config.label_source == true_labels. Instances are
// split across `workers` threads and merged in input order.
AdversarialBatch run_attack(const Target& target, const Tensor& x, std::span<const int> true_labels,
                            const AttackConfig& config, std::size_t workers = 1);

inline constexpr std::string_view kAdversarialMagic = "PMDADV01";
void save_adversarial_batch(const AdversarialBatch& batch, const std::filesystem::path& path);
AdversarialBatch load_adversarial_batch(const std::filesystem::path& path);

}  // namespace pmdef
