#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pmdef/checkpoint.hpp"
#include "pmdef/error.hpp"
#include "pmdef/optimizer.hpp"
#include "pmdef/training.hpp"
#include "support.hpp"

namespace pmdef {
namespace {

using test::toy_task;

OptimizerConfig adam(double lr, std::size_t batch, std::size_t epochs, std::uint64_t seed) {
  OptimizerConfig c;
  c.learning_rate = lr;
  c.batch_size = batch;
  c.epochs = epochs;
  c.seed = seed;
  return c;
}

Tensor first_rows(const Tensor& x, std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return x.gather_rows(idx);
}

TEST(Optimizer, AdamMatchesScalarRecurrence) {
  OptimizerConfig c = adam(0.1, 1, 1, 0);
  Optimizer opt(c);
  Tensor p({2}, std::vector<double>{1.0, -2.0});
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {1.0, -2.0};
  for (int t = 1; t <= 5; ++t) {
    Tensor g({2}, std::vector<double>{0.5 * t, -0.25});
    Tensor* ps[] = {&p};
    const Tensor* gs[] = {&g};
    opt.step(ps, gs, 0.1);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  EXPECT_NEAR(p[0], ref[0], 1e-12);
  EXPECT_NEAR(p[1], ref[1], 1e-12);
}

TEST(Optimizer, FirstAdamStepHasMagnitudeLr) {
  Optimizer opt(adam(0.01, 1, 1, 0));
  Tensor p({3}, 0.0);
  Tensor g({3}, std::vector<double>{3.0, -0.001, 40.0});
  Tensor* ps[] = {&p};
  const Tensor* gs[] = {&g};
  opt.step(ps, gs, 0.01);
  EXPECT_NEAR(p[0], -0.01, 1e-9);
  EXPECT_NEAR(p[1], 0.01, 1e-6);
  EXPECT_NEAR(p[2], -0.01, 1e-9);
}

TEST(Optimizer, SgdMomentum) {
  OptimizerConfig c = adam(0.1, 1, 1, 0);
  c.kind = OptimizerKind::sgd_momentum;
  c.momentum = 0.5;
  Optimizer opt(c);
  Tensor p({1}, 1.0), g({1}, 2.0);
  Tensor* ps[] = {&p};
  const Tensor* gs[] = {&g};
  opt.step(ps, gs, 0.1);
  EXPECT_NEAR(p[0], 0.8, 1e-12);
  opt.step(ps, gs, 0.1);
  EXPECT_NEAR(p[0], 0.8 - 0.1 - 0.2, 1e-12);
}

TEST(Optimizer, ScheduleAndValidation) {
  OptimizerConfig c = adam(0.1, 8, 10, 0);
  c.schedule = {{3, 0.5}, {6, 0.1}};
  EXPECT_DOUBLE_EQ(c.learning_rate_at(0), 0.1);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(3), 0.05);
  EXPECT_NEAR(c.learning_rate_at(9), 0.005, 1e-15);
  auto bad = c;
  bad.learning_rate = 0.0;
  EXPECT_THROW(bad.validate(), ParameterError);
  bad = c;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ParameterError);
  bad = c;
  bad.beta2 = 1.0;
  EXPECT_THROW(bad.validate(), ParameterError);
  EXPECT_THROW(optimizer_config_from_json({{"kind", "rmsprop"}}), ConfigError);
  auto back = optimizer_config_from_json(to_json(c));
  EXPECT_EQ(back.schedule, c.schedule);
  EXPECT_EQ(back.epochs, 10u);
}

TEST(TrainClassifier, ZeroEpochsLeavesParametersUnchanged) {
  const auto& task = toy_task();
  Model m = build_model(test::mlp_classifier_spec({8, 8, 1}, 8, 4), 3);
  const auto before = m.parameters();
  auto report = train_classifier(m, task.train.images, task.train.labels, adam(0.01, 16, 0, 1));
  EXPECT_EQ(m.parameters(), before);
  EXPECT_TRUE(report.epochs.empty());
  EXPECT_DOUBLE_EQ(report.final_loss, report.initial_loss);
}

TEST(TrainClassifier, OverfitsTenInstances) {
  const auto& task = toy_task();
  Tensor x = first_rows(task.train.images, 10);
  std::vector<int> y(task.train.labels.begin(), task.train.labels.begin() + 10);
  Model m = build_model(test::mlp_classifier_spec({8, 8, 1}, 32, 4), 4);
  train_classifier(m, x, y, adam(0.01, 10, 200, 2));
  EXPECT_DOUBLE_EQ(classification_accuracy(m, x, y), 1.0);
}

TEST(TrainClassifier, RecordsScheduledLearningRates) {
  const auto& task = toy_task();
  Model m = build_model(test::mlp_classifier_spec({8, 8, 1}, 8, 4), 3);
  auto c = adam(0.02, 64, 4, 1);
  c.schedule = {{2, 0.1}};
  std::vector<std::size_t> seen;
  TrainCallbacks cb;
  cb.on_epoch_end = [&](const EpochRecord& r, const Model&) { seen.push_back(r.epoch); };
  auto report = train_classifier(m, task.train.images, task.train.labels, c, cb);
  ASSERT_EQ(report.epochs.size(), 4u);
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_DOUBLE_EQ(report.epochs[1].learning_rate, 0.02);
  EXPECT_DOUBLE_EQ(report.epochs[2].learning_rate, 0.002);
  EXPECT_DOUBLE_EQ(report.final_loss, report.epochs.back().mean_loss);
  const auto lines = report.to_jsonl();
  EXPECT_EQ(std::count(lines.begin(), lines.end(), '\n'), 4);
  auto last = nlohmann::json::parse(lines.substr(lines.rfind('\n', lines.size() - 2) + 1));
  EXPECT_TRUE(last.contains("final_loss"));
  EXPECT_EQ(last["seed"], 1);
}

TEST(TrainClassifier, SameSeedSameWeights) {
  const auto& task = toy_task();
  auto run = [&] {
    Model m = build_model(test::mlp_classifier_spec({8, 8, 1}, 8, 4), 3);
    train_classifier(m, task.train.images, task.train.labels, adam(0.01, 32, 3, 9));
    return encode_checkpoint(m);
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainClassifier, FrozenLayersStayFixed) {
  const auto& task = toy_task();
  Model m = build_model(test::mlp_classifier_spec({8, 8, 1}, 8, 4), 3);
  m.parameters().layers.at(1).frozen = true;
  const auto first = m.parameters().layers.at(1);
  const auto second = m.parameters().layers.at(3);
  train_classifier(m, task.train.images, task.train.labels, adam(0.01, 32, 2, 9));
  EXPECT_EQ(m.parameters().layers.at(1), first);
  EXPECT_NE(m.parameters().layers.at(3).weight, second.weight);
}

TEST(TrainClassifier, RejectsBadInputs) {
  const auto& task = toy_task();
  Model m = build_model(test::mlp_classifier_spec({8, 8, 1}, 8, 4), 3);
  std::vector<int> short_labels(task.train.labels.begin(), task.train.labels.end() - 1);
  EXPECT_THROW(train_classifier(m, task.train.images, short_labels, adam(0.01, 8, 1, 0)), DataError);
  auto wrong = task.train.labels;
  wrong[0] = 7;
  EXPECT_THROW(train_classifier(m, task.train.images, wrong, adam(0.01, 8, 1, 0)), DataError);
  EXPECT_THROW(train_classifier(m, Tensor({4, 6, 6, 1}, 0.5), std::vector<int>(4, 0), adam(0.01, 8, 1, 0)),
               DimensionError);
  Model ae = build_model(test::mlp_autoencoder_spec({8, 8, 1}, 4), 1);
  EXPECT_THROW(train_classifier(ae, task.train.images, task.train.labels, adam(0.01, 8, 1, 0)), ContractError);
}

TEST(TrainClassifier, HugeLearningRateDiverges) {
  const auto& task = toy_task();
  Model m = build_model(test::mlp_classifier_spec({8, 8, 1}, 8, 4), 3);
  auto c = adam(1e300, 32, 5, 1);
  c.kind = OptimizerKind::sgd_momentum;
  EXPECT_THROW(train_classifier(m, task.train.images, task.train.labels, c), DivergenceError);
}

TEST(Temperature, Examples) {
  Tensor p({1, 2}, std::vector<double>{0.8, 0.2});
  auto q = temperature_scale(p, 0.5);
  EXPECT_NEAR(q[0], 0.941176, 1e-6);
  EXPECT_NEAR(q[1], 0.058824, 1e-6);
  auto same = temperature_scale(p, 1.0);
  EXPECT_NEAR(same[0], 0.8, 1e-15);
  Tensor flat({1, 2}, std::vector<double>{0.5, 0.5});
  EXPECT_NEAR(temperature_scale(flat, 0.1)[0], 0.5, 1e-15);
  EXPECT_THROW(temperature_scale(p, 0.0), ParameterError);
  EXPECT_THROW(temperature_scale(p, -1.0), ParameterError);
}

TEST(Temperature, PreservesArgmaxAndSharpensBelowOne) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto p = test::random_distribution(1, 5, seed);
    std::mt19937_64 rng(seed);
    const double t = std::uniform_real_distribution<double>(0.05, 3.0)(rng);
    auto q = temperature_scale(p, t);
    auto argmax = [](const Tensor& v) { return std::max_element(v.values().begin(), v.values().end()) - v.values().begin(); };
    EXPECT_EQ(argmax(q), argmax(p));
    EXPECT_NEAR(std::accumulate(q.values().begin(), q.values().end(), 0.0), 1.0, 1e-12);
    const double pm = *std::max_element(p.values().begin(), p.values().end());
    const double qm = *std::max_element(q.values().begin(), q.values().end());
    if (t < 1.0) EXPECT_GE(qm, pm - 1e-12);
    if (t > 1.0) EXPECT_LE(qm, pm + 1e-12);
  }
}

TEST(TrainDefence, ClassifierBytesUnchanged) {
  const auto& task = toy_task();
  const auto before = encode_checkpoint(task.classifier);
  Model ae = build_model(test::mlp_autoencoder_spec({8, 8, 1}, 16), 2);
  for (auto kind : {DefenceLossKind::kl, DefenceLossKind::mse, DefenceLossKind::kl_temperature}) {
    DefenceLossSpec loss;
    loss.kind = kind;
    loss.temperature = 0.5;
    train_defence(ae, task.classifier, first_rows(task.train.images, 64), loss, adam(0.01, 16, 2, 3));
  }
  EXPECT_EQ(encode_checkpoint(task.classifier), before);
}

TEST(TrainDefence, ContractChecks) {
  const auto& task = toy_task();
  Model ae = build_model(test::mlp_autoencoder_spec({8, 8, 1}, 16), 2);
  Model loose = task.classifier;
  loose.set_frozen(false);
  Tensor x = first_rows(task.train.images, 8);
  EXPECT_THROW(train_defence(ae, loose, x, {}, adam(0.01, 8, 1, 0)), ContractError);
  Model small_ae = build_model(test::mlp_autoencoder_spec({6, 6, 1}, 4), 2);
  EXPECT_THROW(train_defence(small_ae, task.classifier, x, {}, adam(0.01, 8, 1, 0)), CompositionError);
  DefenceLossSpec hidden;
  hidden.kind = DefenceLossKind::kl_hidden;
  hidden.probe_layer = 2;
  hidden.probe_dim = 4;
  EXPECT_THROW(train_defence(ae, task.classifier, x, hidden, adam(0.01, 8, 1, 0)), ConfigError);
  DefenceLossSpec temp;
  temp.kind = DefenceLossKind::kl_temperature;
  temp.temperature = 0.0;
  EXPECT_THROW(train_defence(ae, task.classifier, x, temp, adam(0.01, 8, 1, 0)), ParameterError);
}

TEST(TrainDefence, LossSpecJson) {
  DefenceLossSpec s;
  s.kind = DefenceLossKind::kl_hidden;
  s.hidden_weight = 0.5;
  s.probe_layer = 2;
  s.probe_dim = 8;
  auto back = defence_loss_spec_from_json(to_json(s));
  EXPECT_EQ(back.kind, s.kind);
  EXPECT_EQ(back.probe_dim, 8u);
  EXPECT_DOUBLE_EQ(back.hidden_weight, 0.5);
  EXPECT_THROW(defence_loss_kind_from_string("hinge"), ConfigError);
  for (auto k : {DefenceLossKind::kl, DefenceLossKind::mse, DefenceLossKind::kl_temperature, DefenceLossKind::kl_hidden})
    EXPECT_EQ(defence_loss_kind_from_string(to_string(k)), k);
}

class LossDescent : public ::testing::TestWithParam<DefenceLossKind> {};

// Full-batch steps with a small rate: each epoch mean is the loss at the
// start of that epoch.
TEST_P(LossDescent, NonIncreasingInMostSeeds) {
  const auto& task = toy_task();
  Tensor x = first_rows(task.train.images, 24);
  DefenceLossSpec loss;
  loss.kind = GetParam();
  loss.temperature = 0.5;
  loss.probe_layer = 2;
  loss.probe_dim = 6;
  int monotone = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Model ae = build_model(test::mlp_autoencoder_spec({8, 8, 1}, 16), seed);
    std::optional<HiddenProbe> probe;
    if (loss.kind == DefenceLossKind::kl_hidden) probe = make_hidden_probe(task.classifier, 2, 6, seed);
    auto report = train_defence(ae, task.classifier, x, loss, adam(2e-3, 24, 8, seed), probe ? &*probe : nullptr);
    std::vector<double> seq{report.initial_loss};
    for (const auto& e : report.epochs) seq.push_back(e.mean_loss);
    bool ok = true;
    for (std::size_t i = 1; i < seq.size(); ++i) ok = ok && seq[i] <= seq[i - 1] + 1e-12;
    monotone += ok;
    EXPECT_LT(report.final_loss, report.initial_loss);
  }
  EXPECT_GE(monotone, 18);
}

INSTANTIATE_TEST_SUITE_P(Kinds, LossDescent,
                         ::testing::Values(DefenceLossKind::kl, DefenceLossKind::mse, DefenceLossKind::kl_temperature,
                                           DefenceLossKind::kl_hidden),
                         [](const auto& info) { return to_string(info.param); });

TEST(TrainDefence, MseLearnsIdentityOnScalars) {
  ModelSpec clf_spec{"tiny", {1}, {DenseLayer{2}, SoftmaxLayer{}}};
  Model clf = build_model(clf_spec, 1);
  clf.set_frozen(true);
  ModelSpec ae_spec{"scalar", {1}, {DenseLayer{1}}};
  Model ae = build_model(ae_spec, 2);
  Tensor x = test::uniform({64, 1}, 5, 0.1, 0.9);
  DefenceLossSpec loss;
  loss.kind = DefenceLossKind::mse;
  auto report = train_defence(ae, clf, x, loss, adam(0.05, 16, 150, 1));
  EXPECT_LT(report.final_loss, 1e-5);
  EXPECT_NEAR(ae.parameters().layers.at(0).weight[0], 1.0, 0.02);
  EXPECT_NEAR(ae.parameters().layers.at(0).bias[0], 0.0, 0.02);
}

TEST(TrainDefence, IgnoresLabels) {
  const auto& task = toy_task();
  Dataset shuffled = task.train.subset(0, 64);
  std::mt19937_64 rng(3);
  std::shuffle(shuffled.labels.begin(), shuffled.labels.end(), rng);
  auto run = [&](const Dataset& d) {
    Model ae = build_model(test::mlp_autoencoder_spec({8, 8, 1}, 16), 2);
    train_defence(ae, task.classifier, d.images, {}, adam(0.01, 16, 3, 3));
    return encode_checkpoint(ae);
  };
  EXPECT_EQ(run(task.train.subset(0, 64)), run(shuffled));
}

TEST(TrainDefence, KlImprovesAgreementOnToy) {
  const auto& task = toy_task();
  const auto& ae = test::toy_defence();
  DefendedModel defended(task.classifier, ae);
  const auto clean = predict_labels(task.classifier, task.test.images);
  const auto through = predict_labels(defended, task.test.images);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) agree += clean[i] == through[i];
  EXPECT_GE(static_cast<double>(agree) / clean.size(), 0.9);
}

}  // namespace
}  // namespace pmdef
