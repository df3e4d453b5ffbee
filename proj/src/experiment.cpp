#include "pmdef/experiment.hpp"

#include <fstream>

#include "pmdef/error.hpp"
#include "pmdef/rng.hpp"

namespace pmdef {

namespace {

namespace fs = std::filesystem;

fs::path existing(const fs::path& base, const nlohmann::json& value, const std::string& what) {
  fs::path p = value.get<std::string>();
  if (p.is_relative()) p = base / p;
  if (!fs::exists(p)) throw MissingFileError(what + ": " + p.string() + " does not exist");
  return p;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ModelSpec model_ref(const nlohmann::json& j, const fs::path& base, const std::string& what) {
  if (j.is_string()) return model_spec_from_json(read_json(existing(base, j, what)));
  return model_spec_from_json(j);
}

DatasetRef dataset_ref(const nlohmann::json& j, const fs::path& base) {
  DatasetRef d;
  d.kind = j.at("kind").get<std::string>();
  if (d.kind == "idx") {
    d.train_images = existing(base, j.at("train_images"), "train_images");
    d.train_labels = existing(base, j.at("train_labels"), "train_labels");
    d.test_images = existing(base, j.at("test_images"), "test_images");
    d.test_labels = existing(base, j.at("test_labels"), "test_labels");
  } else if (d.kind == "cifar") {
    for (const auto& p : j.at("train")) d.cifar_train.push_back(existing(base, p, "cifar train batch"));
    for (const auto& p : j.at("test")) d.cifar_test.push_back(existing(base, p, "cifar test batch"));
  } else if (d.kind == "synthetic") {
    d.generator = synth_kind_from_string(j.value("generator", std::string("blobs")));
    d.train_size = j.value("train_size", d.train_size);
    d.test_size = j.value("test_size", d.test_size);
    d.image_size = j.value("image_size", d.image_size);
    d.num_classes = j.value("num_classes", d.num_classes);
  } else {
    throw ConfigError("unknown dataset kind '" + d.kind + "'");
  }
  if (j.contains("train_limit")) d.train_limit = j.at("train_limit").get<std::size_t>();
  if (j.contains("test_limit")) d.test_limit = j.at("test_limit").get<std::size_t>();
  return d;
}

Dataset limit(Dataset d, const std::optional<std::size_t>& n) {
  if (n && *n < d.size()) return d.subset(0, *n);
  return d;
}

}  // namespace

ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const fs::path& base_dir,
                                             std::optional<std::uint64_t> seed_override) {
  try {
    ExperimentConfig c;
    c.source = j;
    if (seed_override)
      c.seed = *seed_override;
    else if (j.contains("seed"))
      c.seed = j.at("seed").get<std::uint64_t>();
    else
      throw ConfigError("experiment config needs a seed");
    c.dataset = dataset_ref(j.at("dataset"), base_dir);
    c.classifier = model_ref(j.at("classifier"), base_dir, "classifier spec");
    c.autoencoder = model_ref(j.at("autoencoder"), base_dir, "autoencoder spec");
    if (j.contains("classifier_training")) c.classifier_training = optimizer_config_from_json(j.at("classifier_training"));
    if (j.contains("defence_training")) c.defence_training = optimizer_config_from_json(j.at("defence_training"));
    if (j.contains("defence_loss")) c.defence_loss = defence_loss_spec_from_json(j.at("defence_loss"));
    if (j.contains("attacks"))
      for (const auto& a : j.at("attacks")) c.attacks.push_back(attack_config_from_json(a));
    for (std::size_t i = 0; i < c.attacks.size(); ++i)
      for (std::size_t k = 0; k < i; ++k)
        if (c.attacks[i].name == c.attacks[k].name) throw ConfigError("duplicate attack name '" + c.attacks[i].name + "'");
    if (j.contains("attack_limit")) c.attack_limit = j.at("attack_limit").get<std::size_t>();
    c.false_positive_rate = j.value("false_positive_rate", c.false_positive_rate);
    if (!(c.false_positive_rate >= 0.0 && c.false_positive_rate <= 1.0))
      throw ConfigError("false_positive_rate must be in [0, 1]");
    if (j.contains("score")) {
      const auto& s = j.at("score");
      c.score.metric = score_metric_from_string(s.value("metric", std::string("kl")));
      if (s.contains("temperature") && !s.at("temperature").is_null())
        c.score.temperature = s.at("temperature").get<double>();
    }
    if (j.contains("drift")) {
      const auto& d = j.at("drift");
      if (d.contains("kinds")) {
        c.drift_kinds.clear();
        for (const auto& k : d.at("kinds")) c.drift_kinds.push_back(corruption_kind_from_string(k.get<std::string>()));
      }
      if (d.contains("severities")) c.drift_severities = d.at("severities").get<std::vector<int>>();
      for (int s : c.drift_severities)
        if (s < 0 || s > 5) throw ConfigError("drift severities must be in 0..5");
    }
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("ensemble")) {
      const auto& e = j.at("ensemble");
      c.ensemble_epochs = e.value("epochs", std::vector<std::size_t>{});
      c.ensemble_share = e.value("share", c.ensemble_share);
      if (!(c.ensemble_share >= 0.0 && c.ensemble_share <= 1.0)) throw ConfigError("ensemble share must be in [0, 1]");
      if (c.checkpoint_every == 0) throw ConfigError("ensemble needs checkpoint_every > 0");
      for (std::size_t ep : c.ensemble_epochs)
        if (ep == 0 || ep % c.checkpoint_every != 0 || ep > c.defence_training.epochs)
          throw ConfigError("ensemble epoch " + std::to_string(ep) + " is not a saved checkpoint");
    }
    if (j.contains("output_dir")) {
      c.output_dir = j.at("output_dir").get<std::string>();
      if (c.output_dir.is_relative()) c.output_dir = base_dir / c.output_dir;
    }
    c.classifier_training.seed = derive_seed(c.seed, std::string_view("train-classifier"));
    c.defence_training.seed = derive_seed(c.seed, std::string_view("train-defence"));
    for (auto& a : c.attacks) a.seed = derive_seed(derive_seed(c.seed, std::string_view("attack")), std::string_view(a.name));
    c.classifier.layer_shapes();
    c.autoencoder.layer_shapes();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  const nlohmann::json j = read_json(path);
  return experiment_config_from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path(), seed_override);
}

Dataset load_train_split(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  if (d.kind == "idx") return limit(parse_idx(d.train_images, d.train_labels), d.train_limit);
  if (d.kind == "cifar") return limit(parse_cifar_binary(d.cifar_train), d.train_limit);
  return limit(synth_dataset(d.generator, d.train_size, d.image_size, d.num_classes,
                             derive_seed(c.seed, std::string_view("data-train"))),
               d.train_limit);
}

Dataset load_test_split(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  if (d.kind == "idx") return limit(parse_idx(d.test_images, d.test_labels), d.test_limit);
  if (d.kind == "cifar") return limit(parse_cifar_binary(d.cifar_test), d.test_limit);
  return limit(synth_dataset(d.generator, d.test_size, d.image_size, d.num_classes,
                             derive_seed(c.seed, std::string_view("data-test"))),
               d.test_limit);
}

}  // namespace pmdef
