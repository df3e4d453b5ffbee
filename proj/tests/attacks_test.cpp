#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pmdef/attacks.hpp"
#include "pmdef/binary_io.hpp"
#include "pmdef/error.hpp"
#include "pmdef/projection.hpp"
#include "support.hpp"

namespace pmdef {
namespace {

using test::toy_task;

Tensor subset_images(const Tensor& x, std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return x.gather_rows(idx);
}

bool same(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::ranges::equal(a.values(), b.values());
}

// Two-class linear model on d features: class 0 logit is 0, class 1 logit is
// g . x.
Model gradient_model(const std::vector<double>& g) {
  const std::size_t d = g.size();
  Tensor w({d, 2}, 0.0);
  for (std::size_t i = 0; i < d; ++i) w[i * 2 + 1] = g[i];
  return test::linear_classifier({d}, w, Tensor({2}, 0.0));
}

TEST(Sign, ZeroIsZero) {
  EXPECT_EQ(sign(0.0), 0.0);
  EXPECT_EQ(sign(-0.0), 0.0);
  EXPECT_EQ(sign(3.0), 1.0);
  EXPECT_EQ(sign(-1e-300), -1.0);
}

TEST(Fgsm, LogisticExample) {
  Model m = gradient_model({2.0});
  ClassifierTarget target(m);
  Tensor x({1, 1}, 0.5);
  std::vector<int> y{0};
  auto batch = fgsm(target, x, y, 0.1);
  EXPECT_NEAR(batch.adversarials[0], 0.6, 1e-15);
  EXPECT_NEAR(batch.diagnostics.raw_perturbation[0], 0.1, 1e-15);
}

TEST(Fgsm, ComponentsAreSignSteps) {
  const auto& task = toy_task();
  ClassifierTarget target(task.classifier);
  Tensor x = subset_images(task.test.images, 20);
  const auto y = predict_labels(task.classifier, x);
  const double eps = 0.07;
  auto batch = fgsm(target, x, y, eps);
  const auto& raw = batch.diagnostics.raw_perturbation;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = raw[i];
    EXPECT_TRUE(r == 0.0 || std::abs(std::abs(r) - eps) < 1e-15);
    const double unclipped = x[i] + r;
    if (unclipped >= 0.0 && unclipped <= 1.0) EXPECT_NEAR(std::abs(batch.adversarials[i] - x[i]), std::abs(r), 1e-15);
    EXPECT_GE(batch.adversarials[i], 0.0);
    EXPECT_LE(batch.adversarials[i], 1.0);
  }
  for (double v : batch.linf) EXPECT_LE(v, eps + 1e-15);
}

TEST(Fgsm, TinyEpsilonKeepsArgmax) {
  const auto& task = toy_task();
  ClassifierTarget target(task.classifier);
  Tensor x = subset_images(task.test.images, 30);
  auto batch = fgsm(target, x, predict_labels(task.classifier, x), 1e-9);
  EXPECT_EQ(batch.adversarial_predictions, batch.original_predictions);
  EXPECT_EQ(batch.success_rate(), 0.0);
}

TEST(Fgsm, RejectsNonPositiveEpsilon) {
  Model m = gradient_model({2.0});
  ClassifierTarget target(m);
  Tensor x({1, 1}, 0.5);
  std::vector<int> y{0};
  EXPECT_THROW(fgsm(target, x, y, 0.0), ParameterError);
  EXPECT_THROW(fgsm(target, x, y, -0.1), ParameterError);
}

TEST(Percentile, LinearInterpolation) {
  std::vector<double> v{9, 8, 1, 1, 1, 1, 1, 1, 1, 1};
  EXPECT_NEAR(percentile(v, 80.0), 2.4, 1e-12);
  std::vector<double> w{3, 1, 2};
  EXPECT_DOUBLE_EQ(percentile(w, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(percentile(w, 50.0), 2.0);
  EXPECT_DOUBLE_EQ(percentile(w, 100.0), 3.0);
  EXPECT_DOUBLE_EQ(percentile(w, 25.0), 1.5);
}

// Soft-threshold at the theta that makes the l1 norm equal the radius, found
// by bisection.
std::vector<double> bisection_projection(const std::vector<double>& v, double radius) {
  double l1 = 0.0;
  for (double x : v) l1 += std::abs(x);
  if (l1 <= radius) return v;
  double lo = 0.0, hi = *std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
  hi = std::abs(hi);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double s = 0.0;
    for (double x : v) s += std::max(std::abs(x) - mid, 0.0);
    (s > radius ? lo : hi) = mid;
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = sign(v[i]) * std::max(std::abs(v[i]) - hi, 0.0);
  return out;
}

TEST(ProjectL1, MatchesBisectionOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    std::vector<double> v(n);
    std::normal_distribution<double> d(0.0, 1.0);
    for (auto& x : v) x = d(rng);
    const double radius = std::uniform_real_distribution<double>(0.01, 3.0)(rng);
    auto expect = bisection_projection(v, radius);
    auto got = v;
    project_l1_ball(got, radius);
    double l1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(got[i], expect[i], 1e-9);
      l1 += std::abs(got[i]);
    }
    EXPECT_LE(l1, radius + 1e-12);
  }
}

TEST(ProjectL1, InsideBallUnchanged) {
  std::vector<double> v{0.1, -0.2, 0.05};
  auto copy = v;
  project_l1_ball(copy, 1.0);
  EXPECT_EQ(copy, v);
}

TEST(Slide, ZeroStepsIsIdentity) {
  const auto& task = toy_task();
  ClassifierTarget target(task.classifier);
  Tensor x = subset_images(task.test.images, 5);
  SlideConfig c;
  c.steps = 0;
  auto batch = slide(target, x, predict_labels(task.classifier, x), c);
  EXPECT_TRUE(same(batch.adversarials, x));
}

TEST(Slide, PercentileSelectsTopTwo) {
  Model m = gradient_model({0.09, 0.08, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01});
  ClassifierTarget target(m);
  Tensor x({1, 10}, 0.5);
  std::vector<int> y{0};
  SlideConfig c;
  c.percentile = 80.0;
  c.step = 0.05;
  c.steps = 1;
  c.l1_bound = 10.0;
  auto batch = slide(target, x, y, c);
  ASSERT_EQ(batch.diagnostics.direction_nonzeros[0].size(), 1u);
  EXPECT_EQ(batch.diagnostics.direction_nonzeros[0][0], 2u);
  const double expect = 0.05 / std::sqrt(2.0);
  EXPECT_NEAR(batch.adversarials[0] - 0.5, expect, 1e-14);
  EXPECT_NEAR(batch.adversarials[1] - 0.5, expect, 1e-14);
  for (std::size_t i = 2; i < 10; ++i) EXPECT_EQ(batch.adversarials[i], 0.5);
}

TEST(Slide, SingleComponentMovesByStep) {
  Model m = gradient_model({0.5, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  ClassifierTarget target(m);
  Tensor x({1, 10}, 0.5);
  std::vector<int> y{0};
  SlideConfig c;
  c.steps = 1;
  c.step = 0.05;
  c.l1_bound = 10.0;
  auto batch = slide(target, x, y, c);
  EXPECT_NEAR(batch.adversarials[0] - 0.5, 0.05, 1e-15);
}

TEST(Slide, ZeroDirectionSkipsIteration) {
  Model m = gradient_model(std::vector<double>(6, 0.0));
  ClassifierTarget target(m);
  Tensor x({1, 6}, 0.5);
  std::vector<int> y{0};
  SlideConfig c;
  c.steps = 3;
  auto batch = slide(target, x, y, c);
  EXPECT_EQ(batch.diagnostics.skipped_iterations[0], 3u);
  EXPECT_TRUE(same(batch.adversarials, x));
}

TEST(Slide, SparsityAndL1BoundEveryIterate) {
  const auto& task = toy_task();
  ClassifierTarget target(task.classifier);
  Tensor x = subset_images(task.test.images, 20);
  SlideConfig c;
  c.percentile = 90.0;
  c.step = 0.3;
  c.steps = 8;
  c.l1_bound = 0.8;
  auto batch = slide(target, x, predict_labels(task.classifier, x), c);
  const auto n = shape_size(task.classifier.input_shape());
  const auto cap = static_cast<std::size_t>(std::ceil((1.0 - c.percentile / 100.0) * n));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ASSERT_EQ(batch.diagnostics.iterate_l1[i].size(), c.steps);
    for (auto nz : batch.diagnostics.direction_nonzeros[i]) EXPECT_LE(nz, cap);
    for (double l1 : batch.diagnostics.iterate_l1[i]) EXPECT_LE(l1, c.l1_bound + 1e-12);
    EXPECT_LE(batch.l1[i], c.l1_bound + 1e-12);
  }
  for (double v : batch.adversarials.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

CwConfig cw_config() {
  CwConfig c;
  c.c_init = 10.0;
  c.binary_steps = 6;
  c.max_iter = 400;
  c.learning_rate = 0.01;
  return c;
}

TEST(CarliniWagner, LinearModelNearGridOptimum) {
  const double a = 5.0;
  Tensor w({2, 2}, std::vector<double>{0.0, a, 0.0, -a});
  Model m = test::linear_classifier({2}, w, Tensor({2}, 0.0));
  ClassifierTarget target(m);
  Tensor x({1, 2}, std::vector<double>{0.6, 0.4});
  auto batch = cw_l2(target, x, cw_config());
  ASSERT_TRUE(batch.success[0]);
  double best = std::numeric_limits<double>::infinity();
  for (int i = -400; i <= 400; ++i)
    for (int j = -400; j <= 400; ++j) {
      const double d0 = i * 1e-3, d1 = j * 1e-3;
      const double x0 = 0.6 + d0, x1 = 0.4 + d1;
      if (x0 < 0 || x0 > 1 || x1 < 0 || x1 > 1) continue;
      if (a * (x0 - x1) < 0.0) best = std::min(best, std::hypot(d0, d1));
    }
  EXPECT_NEAR(batch.l2[0], best, 0.05 * best);
}

TEST(CarliniWagner, AlreadyMisclassifiedNeedsNoPerturbation) {
  Tensor w({2, 2}, std::vector<double>{0.0, 5.0, 0.0, -5.0});
  Model m = test::linear_classifier({2}, w, Tensor({2}, 0.0));
  ClassifierTarget target(m);
  Tensor x({1, 2}, std::vector<double>{0.6, 0.4});
  std::vector<int> y{0};
  auto batch = cw_l2(target, x, y, cw_config());
  EXPECT_LE(batch.l2[0], 1e-3);
}

TEST(CarliniWagner, ConstantModelNeverSucceeds) {
  Model m = test::linear_classifier({4}, Tensor({4, 3}, 0.0), Tensor({3}, std::vector<double>{0.0, 1.0, 0.0}));
  ClassifierTarget target(m);
  Tensor x = test::uniform({3, 4}, 2, 0.1, 0.9);
  CwConfig c = cw_config();
  c.binary_steps = 2;
  c.max_iter = 30;
  auto batch = cw_l2(target, x, c);
  for (auto s : batch.success) EXPECT_FALSE(s);
  EXPECT_TRUE(same(batch.adversarials, x));
}

TEST(CarliniWagner, MoreRoundsNeverWorsenBestL2) {
  const auto& task = toy_task();
  ClassifierTarget target(task.classifier);
  Tensor x = subset_images(task.test.images, 8);
  CwConfig c;
  c.c_init = 1.0;
  c.max_iter = 60;
  c.learning_rate = 0.05;
  c.binary_steps = 1;
  auto one = cw_l2(target, x, c);
  c.binary_steps = 4;
  auto four = cw_l2(target, x, c);
  std::size_t compared = 0;
  for (std::size_t i = 0; i < x.batch(); ++i) {
    if (one.success[i]) {
      ASSERT_TRUE(four.success[i]);
      EXPECT_LE(four.l2[i], one.l2[i] + 1e-12);
      ++compared;
    }
  }
  EXPECT_GT(compared, 0u);
}

AttackConfig named(const std::string& name, AttackParams params) {
  AttackConfig c;
  c.name = name;
  c.params = params;
  c.seed = 17;
  return c;
}

std::vector<AttackConfig> all_attacks() {
  SlideConfig s;
  s.l1_bound = 6.0;
  s.step = 1.0;
  CwConfig cw;
  cw.c_init = 1.0;
  cw.binary_steps = 2;
  cw.max_iter = 40;
  return {named("fgsm", FgsmConfig{0.2}), named("slide", s), named("cw", cw)};
}

TEST(RunAttack, DomainSuccessMaskAndNorms) {
  const auto& task = toy_task();
  ClassifierTarget target(task.classifier);
  Tensor x = subset_images(task.test.images, 24);
  std::vector<int> y(task.test.labels.begin(), task.test.labels.begin() + 24);
  for (const auto& config : all_attacks()) {
    auto batch = run_attack(target, x, y, config);
    SCOPED_TRACE(config.name);
    EXPECT_EQ(batch.labels, y);
    EXPECT_EQ(batch.original_predictions, predict_labels(task.classifier, x));
    EXPECT_EQ(batch.adversarial_predictions, predict_labels(task.classifier, batch.adversarials));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      EXPECT_EQ(static_cast<bool>(batch.success[i]),
                batch.adversarial_predictions[i] != batch.original_predictions[i]);
      double l1 = 0, l2 = 0, linf = 0;
      for (std::size_t j = 0; j < 64; ++j) {
        const double d = batch.adversarials[i * 64 + j] - x[i * 64 + j];
        l1 += std::abs(d);
        l2 += d * d;
        linf = std::max(linf, std::abs(d));
      }
      EXPECT_NEAR(batch.l1[i], l1, 1e-12);
      EXPECT_NEAR(batch.l2[i], std::sqrt(l2), 1e-12);
      EXPECT_NEAR(batch.linf[i], linf, 1e-15);
    }
    for (double v : batch.adversarials.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_GT(batch.success_rate(), 0.0);
  }
}

TEST(RunAttack, DeterministicAcrossWorkers) {
  const auto& task = toy_task();
  ClassifierTarget target(task.classifier);
  Tensor x = subset_images(task.test.images, 13);
  std::vector<int> y(task.test.labels.begin(), task.test.labels.begin() + 13);
  for (const auto& config : all_attacks()) {
    auto a = run_attack(target, x, y, config, 1);
    auto b = run_attack(target, x, y, config, 4);
    auto c = run_attack(target, x, y, config, 4);
    EXPECT_TRUE(same(a.adversarials, b.adversarials)) << config.name;
    EXPECT_TRUE(same(b.adversarials, c.adversarials)) << config.name;
    EXPECT_EQ(a.success, b.success);
  }
}

TEST(RunAttack, WhiteBoxDiffersFromGreyBox) {
  const auto& task = toy_task();
  Tensor x = subset_images(task.test.images, 10);
  ClassifierTarget grey(task.classifier);
  DefendedModel white(task.classifier, test::toy_defence());
  const auto y = predict_labels(task.classifier, x);
  auto a = fgsm(grey, x, y, 0.1);
  auto b = fgsm(white, x, y, 0.1);
  EXPECT_FALSE(same(a.adversarials, b.adversarials));
}

TEST(RunAttack, LabelSourceSelectsAttackLabel) {
  Model m = gradient_model({2.0});
  ClassifierTarget target(m);
  Tensor x({1, 1}, 0.5);
  std::vector<int> truth{0};
  auto config = named("f", FgsmConfig{0.1});
  EXPECT_NEAR(run_attack(target, x, truth, config).adversarials[0], 0.4, 1e-15);
  config.label_source = LabelSource::true_labels;
  EXPECT_NEAR(run_attack(target, x, truth, config).adversarials[0], 0.6, 1e-15);
}

TEST(AttackConfig, ValidationAndJson) {
  for (const auto& c : all_attacks()) {
    auto back = attack_config_from_json(to_json(c));
    EXPECT_EQ(back.name, c.name);
    EXPECT_EQ(attack_kind(back), attack_kind(c));
    EXPECT_EQ(to_json(back), to_json(c));
  }
  SlideConfig s;
  s.percentile = 100.0;
  EXPECT_THROW(named("s", s).validate(), ParameterError);
  CwConfig cw;
  cw.binary_steps = 0;
  EXPECT_THROW(named("c", cw).validate(), ParameterError);
  cw = {};
  cw.confidence = -1.0;
  EXPECT_THROW(named("c", cw).validate(), ParameterError);
  EXPECT_THROW(named("f", FgsmConfig{0.0}).validate(), ParameterError);
  EXPECT_THROW(attack_config_from_json({{"name", "x"}, {"kind", "deepfool"}}), ConfigError);
}

TEST(AdversarialBatchIo, RoundTrip) {
  const auto& task = toy_task();
  ClassifierTarget target(task.classifier);
  Tensor x = subset_images(task.test.images, 6);
  std::vector<int> y(task.test.labels.begin(), task.test.labels.begin() + 6);
  SlideConfig s;
  s.steps = 2;
  auto batch = run_attack(target, x, y, named("slide", s));
  test::TempDir dir("advio");
  save_adversarial_batch(batch, dir / "a.adv");
  auto back = load_adversarial_batch(dir / "a.adv");
  EXPECT_TRUE(same(back.adversarials, batch.adversarials));
  EXPECT_TRUE(same(back.originals, batch.originals));
  EXPECT_EQ(back.labels, batch.labels);
  EXPECT_EQ(back.success, batch.success);
  EXPECT_EQ(back.original_predictions, batch.original_predictions);
  EXPECT_EQ(back.adversarial_predictions, batch.adversarial_predictions);
  EXPECT_EQ(back.l2, batch.l2);
  EXPECT_EQ(to_json(back.config), to_json(batch.config));

  auto bytes = read_file(dir / "a.adv");
  bytes[0] = 'X';
  write_file(dir / "bad.adv", bytes);
  EXPECT_THROW(load_adversarial_batch(dir / "bad.adv"), ParseError);
  bytes = read_file(dir / "a.adv");
  bytes.resize(bytes.size() - 9);
  write_file(dir / "short.adv", bytes);
  EXPECT_THROW(load_adversarial_batch(dir / "short.adv"), ParseError);
}

}  // namespace
}  // namespace pmdef
