#include "pmdef/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <openssl/evp.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "pmdef/checkpoint.hpp"
#include "pmdef/error.hpp"
#include "pmdef/experiment.hpp"
#include "pmdef/rng.hpp"

namespace pmdef {

namespace fs = std::filesystem;

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("sha256 init failed");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  static constexpr char hex[] = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

nlohmann::json make_manifest(const std::string& command, const nlohmann::json& config, std::uint64_t seed,
                             const fs::path& output_dir, const std::vector<std::string>& artifacts) {
  nlohmann::json files = nlohmann::json::array();
  for (const auto& name : artifacts) {
    const auto p = output_dir / name;
    files.push_back({{"path", name}, {"bytes", fs::file_size(p)}, {"sha256", sha256_file(p)}});
  }
  return {{"command", command}, {"seed", seed}, {"config", config}, {"artifacts", files}};
}

namespace {

struct Context {
  ExperimentConfig config;
  fs::path out;
  std::size_t workers = 1;
  std::shared_ptr<spdlog::logger> log;
  std::vector<std::string> artifacts;

  fs::path at(const std::string& name) const { return out / name; }

  fs::path require(const std::string& name, const std::string& producer) const {
    auto p = at(name);
    if (!fs::exists(p)) throw MissingFileError("missing " + p.string() + " (run `" + producer + "` first)");
    return p;
  }

  void write(const std::string& name, const std::string& text) {
    std::ofstream f(at(name), std::ios::binary);
    if (!f) throw IoError("cannot write " + at(name).string());
    f << text;
    if (!f) throw IoError("write failed for " + at(name).string());
    artifacts.push_back(name);
  }

  void write_json(const std::string& name, const nlohmann::json& j) { write(name, j.dump(2) + "\n"); }

  void saved(const std::string& name) { artifacts.push_back(name); }
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::string scores_csv(const std::vector<double>& scores) {
  std::string s = "id,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) s += std::to_string(i) + "," + num(scores[i]) + "\n";
  return s;
}

Model load_classifier(const Context& c) {
  Model m = load_checkpoint(c.require("classifier.ckpt", "train-classifier"), c.config.classifier);
  m.set_frozen(true);
  return m;
}

Model load_defence(const Context& c) {
  return load_checkpoint(c.require("defence.ckpt", "train-defence"), c.config.autoencoder);
}

std::string attack_file(const AttackConfig& a) { return "attack_" + a.name + ".adv"; }

AdversarialBatch load_attack(const Context& c, const AttackConfig& a) {
  return load_adversarial_batch(c.require(attack_file(a), "attack"));
}

Dataset attack_split(const Context& c) {
  Dataset d = load_test_split(c.config);
  if (c.config.attack_limit && *c.config.attack_limit < d.size()) return d.subset(0, *c.config.attack_limit);
  return d;
}

// Test instances left over after the attack subset, else the training split.
std::pair<Dataset, std::string> calibration_split(const Context& c) {
  Dataset d = load_test_split(c.config);
  const std::size_t used = c.config.attack_limit ? std::min(*c.config.attack_limit, d.size()) : d.size();
  if (used < d.size()) return {d.subset(used, d.size()), "test[" + std::to_string(used) + ":]"};
  return {load_train_split(c.config), "train"};
}

void require_attacks(const Context& c) {
  if (c.config.attacks.empty()) throw ConfigError("config lists no attacks");
}

void cmd_train_classifier(Context& c) {
  const auto& cfg = c.config;
  const Dataset train = load_train_split(cfg);
  const Dataset test = load_test_split(cfg);
  Model model = build_model(cfg.classifier, derive_seed(cfg.seed, std::string_view("init-classifier")),
                            Preprocessing{train.standardize_per_image});
  TrainCallbacks cb;
  cb.on_epoch_end = [&](const EpochRecord& r, const Model&) {
    c.log->info("classifier epoch {} loss {:.6f}", r.epoch + 1, r.mean_loss);
  };
  const TrainReport report = train_classifier(model, train.images, train.labels, cfg.classifier_training, cb);
  save_checkpoint(model, c.at("classifier.ckpt"));
  c.saved("classifier.ckpt");
  c.write("classifier_train.jsonl", report.to_jsonl());
  const double train_acc = classification_accuracy(model, train.images, train.labels);
  const double test_acc = classification_accuracy(model, test.images, test.labels);
  c.log->info("classifier train accuracy {:.4f} test accuracy {:.4f}", train_acc, test_acc);
  c.write_json("classifier_metrics.json", {{"train_accuracy", train_acc},
                                           {"test_accuracy", test_acc},
                                           {"parameters", model.spec().parameter_count()},
                                           {"final_loss", report.final_loss}});
}

void cmd_train_defence(Context& c) {
  const auto& cfg = c.config;
  const Model classifier = load_classifier(c);
  const Dataset train = load_train_split(cfg);
  const Dataset test = load_test_split(cfg);
  Model ae = build_model(cfg.autoencoder, derive_seed(cfg.seed, std::string_view("init-defence")));
  std::optional<HiddenProbe> probe;
  if (cfg.defence_loss.kind == DefenceLossKind::kl_hidden)
    probe = make_hidden_probe(classifier, cfg.defence_loss.probe_layer, cfg.defence_loss.probe_dim,
                              derive_seed(cfg.seed, std::string_view("init-probe")));
  HiddenProbe* probe_ptr = probe ? &*probe : nullptr;
  std::vector<std::string> snapshots;
  TrainCallbacks cb;
  cb.on_epoch_end = [&](const EpochRecord& r, const Model& m) {
    c.log->info("defence epoch {} loss {:.6f}", r.epoch + 1, r.mean_loss);
    if (cfg.checkpoint_every > 0 && (r.epoch + 1) % cfg.checkpoint_every == 0) {
      const std::string name = "defence_epoch" + std::to_string(r.epoch + 1) + ".ckpt";
      save_checkpoint(m, c.at(name), probe_ptr);
      snapshots.push_back(name);
    }
  };
  const TrainReport report = train_defence(ae, classifier, train.images, cfg.defence_loss, cfg.defence_training,
                                           probe_ptr, cb);
  save_checkpoint(ae, c.at("defence.ckpt"), probe_ptr);
  c.saved("defence.ckpt");
  for (const auto& s : snapshots) c.saved(s);
  c.write("defence_train.jsonl", report.to_jsonl());
  const auto recon = predict_labels(classifier, reconstruct(ae, test.images));
  const auto scores = adversarial_score(classifier, ae, test.images, cfg.score);
  double mean = 0.0;
  for (double s : scores) mean += s / static_cast<double>(scores.size());
  const double acc = accuracy(recon, test.labels);
  c.log->info("defence clean accuracy through AE {:.4f}", acc);
  c.write_json("defence_metrics.json", {{"reconstructed_test_accuracy", acc},
                                        {"mean_test_score", mean},
                                        {"loss", to_json(cfg.defence_loss)},
                                        {"final_loss", report.final_loss}});
}

void cmd_attack(Context& c) {
  const auto& cfg = c.config;
  require_attacks(c);
  const Model classifier = load_classifier(c);
  std::optional<Model> ae;
  for (const auto& a : cfg.attacks)
    if (a.mode == TargetMode::white_box && !ae) ae = load_defence(c);
  const Dataset data = attack_split(c);
  std::string summary = "attack,kind,mode,instances,success_rate,mean_l1,mean_l2,mean_linf\n";
  for (const auto& a : cfg.attacks) {
    const ClassifierTarget grey(classifier);
    std::optional<DefendedModel> white;
    if (a.mode == TargetMode::white_box) white.emplace(classifier, *ae);
    const Target& target = white ? static_cast<const Target&>(*white) : grey;
    const AdversarialBatch batch = run_attack(target, data.images, data.labels, a, c.workers);
    save_adversarial_batch(batch, c.at(attack_file(a)));
    c.saved(attack_file(a));
    double l1 = 0.0, l2 = 0.0, linf = 0.0;
    const double n = static_cast<double>(std::max<std::size_t>(batch.size(), 1));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      l1 += batch.l1[i] / n;
      l2 += batch.l2[i] / n;
      linf += batch.linf[i] / n;
    }
    c.log->info("attack {} success rate {:.4f}", a.name, batch.success_rate());
    summary += a.name + "," + attack_kind(a) + "," + (a.mode == TargetMode::white_box ? "white_box" : "grey_box") +
               "," + std::to_string(batch.size()) + "," + num(batch.success_rate()) + "," + num(l1) + "," + num(l2) +
               "," + num(linf) + "\n";
  }
  c.write("attacks.csv", summary);
}

void cmd_score(Context& c) {
  const auto& cfg = c.config;
  const Model classifier = load_classifier(c);
  const Model ae = load_defence(c);
  std::vector<AdversarialBatch> batches;
  for (const auto& a : cfg.attacks) batches.push_back(load_attack(c, a));
  const Dataset data = attack_split(c);
  c.write("scores_normal.csv", scores_csv(adversarial_score(classifier, ae, data.images, cfg.score)));
  for (std::size_t i = 0; i < batches.size(); ++i)
    c.write("scores_" + cfg.attacks[i].name + ".csv",
            scores_csv(adversarial_score(classifier, ae, batches[i].adversarials, cfg.score)));
}

nlohmann::json threshold_json(double t) {
  if (std::isinf(t)) return t < 0 ? "-inf" : "inf";
  return t;
}

double threshold_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "-inf") return kNegativeInfinity;
    if (s == "inf") return -kNegativeInfinity;
    throw ConfigError("bad threshold '" + s + "'");
  }
  return j.get<double>();
}

void cmd_calibrate(Context& c) {
  const auto& cfg = c.config;
  const Model classifier = load_classifier(c);
  const Model ae = load_defence(c);
  const auto [data, source] = calibration_split(c);
  const auto scores = adversarial_score(classifier, ae, data.images, cfg.score);
  const double t = calibrate_threshold(scores, cfg.false_positive_rate);
  const auto flagged = std::count_if(scores.begin(), scores.end(), [&](double s) { return s > t; });
  const double fpr = static_cast<double>(flagged) / static_cast<double>(scores.size());
  c.log->info("threshold {} (fpr {:.4f} on {} instances)", t, fpr, scores.size());
  c.write_json("threshold.json", {{"threshold", threshold_json(t)},
                                  {"false_positive_rate", cfg.false_positive_rate},
                                  {"empirical_false_positive_rate", fpr},
                                  {"calibration_instances", scores.size()},
                                  {"calibration_source", source},
                                  {"metric", to_string(cfg.score.metric)}});
}

double load_threshold(const Context& c) {
  std::ifstream in(c.require("threshold.json", "calibrate"));
  try {
    return threshold_from_json(nlohmann::json::parse(in).at("threshold"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("threshold.json: ") + e.what());
  }
}

void cmd_evaluate(Context& c) {
  const auto& cfg = c.config;
  require_attacks(c);
  std::vector<AdversarialBatch> batches;
  for (const auto& a : cfg.attacks) batches.push_back(load_attack(c, a));
  const Model classifier = load_classifier(c);
  const Model ae = load_defence(c);
  const double t = load_threshold(c);
  std::vector<Model> snapshots;
  for (std::size_t ep : cfg.ensemble_epochs)
    snapshots.push_back(load_checkpoint(c.require("defence_epoch" + std::to_string(ep) + ".ckpt", "train-defence"),
                                        cfg.autoencoder));
  std::vector<const Model*> members;
  for (const auto& m : snapshots) members.push_back(&m);
  const std::optional<EnsembleSpec> ensemble =
      members.empty() ? std::nullopt : std::optional(uniform_ensemble(members, cfg.ensemble_share));

  const Dataset data = attack_split(c);
  std::vector<AttackSet> sets;
  for (std::size_t i = 0; i < batches.size(); ++i) sets.push_back({cfg.attacks[i].name, &batches[i]});
  const DefenceColumn column{upper(to_string(cfg.defence_loss.kind)), &ae, t};
  const AccuracyTable table = accuracy_report(classifier, std::span(&column, 1), data, sets, cfg.score);
  c.write("accuracy.csv", table.to_csv());

  for (std::size_t i = 0; i < batches.size(); ++i) {
    const auto verdicts = ensemble ? detect_and_correct_ensemble(classifier, ae, *ensemble, batches[i].adversarials,
                                                                 t, cfg.score)
                                   : detect_and_correct(classifier, ae, batches[i].adversarials, t, cfg.score);
    c.write("verdicts_" + cfg.attacks[i].name + ".csv", verdicts_to_csv(verdicts));
  }
  if (ensemble) {
    std::string csv = "attack,single,ensemble\n";
    auto row = [&](const std::string& name, const Tensor& x, std::span<const int> labels) {
      const double single = accuracy(predict_labels(classifier, reconstruct(ae, x)), labels);
      const double vote = accuracy(ensemble_predict(*ensemble, classifier, x), labels);
      csv += name + "," + num(single) + "," + num(vote) + "\n";
    };
    row("none", data.images, data.labels);
    for (std::size_t i = 0; i < batches.size(); ++i) row(cfg.attacks[i].name, batches[i].adversarials, batches[i].labels);
    c.write("ensemble.csv", csv);
  }
}

void cmd_drift(Context& c) {
  const auto& cfg = c.config;
  const Model classifier = load_classifier(c);
  const Model ae = load_defence(c);
  const Dataset data = attack_split(c);
  const DriftReport report = drift_report(classifier, ae, data, cfg.drift_kinds, cfg.drift_severities,
                                          derive_seed(cfg.seed, std::string_view("drift")), cfg.score);
  c.write_json("drift.json", to_json(report));
  c.write("drift.csv", report.to_csv());
}

void cmd_roc(Context& c) {
  const auto& cfg = c.config;
  require_attacks(c);
  const Model classifier = load_classifier(c);
  const Model ae = load_defence(c);
  std::vector<AdversarialBatch> batches;
  for (const auto& a : cfg.attacks) batches.push_back(load_attack(c, a));
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const auto normal = adversarial_score(classifier, ae, batches[i].originals, cfg.score);
    const auto adv = adversarial_score(classifier, ae, batches[i].adversarials, cfg.score);
    const RocCurve roc = roc_auc(normal, adv);
    c.log->info("roc {} auc {:.4f}", cfg.attacks[i].name, roc.auc);
    c.write_json("roc_" + cfg.attacks[i].name + ".json", to_json(roc));
  }
}

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_st>(err);
  auto log = std::make_shared<spdlog::logger>("pmdef", sink);
  log->set_pattern("[%l] %v");
  const char* env = std::getenv("PMDEF_LOG");
  log->set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
  return log;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prediction-matching adversarial defence pipeline", args.empty() ? "pmdef" : args.front()};
  app.require_subcommand(1, 1);
  app.fallthrough();
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--config", config_path, "Experiment JSON")->required();
  app.add_option("--seed", seed, "Root seed (overrides the config)");
  app.add_option("--out", out_dir, "Output directory (overrides the config)");
  app.add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  using Command = void (*)(Context&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands = {
      {"train-classifier", "Train the classifier", cmd_train_classifier},
      {"train-defence", "Train the defence autoencoder", cmd_train_defence},
      {"attack", "Generate adversarial batches", cmd_attack},
      {"score", "Write adversarial scores", cmd_score},
      {"calibrate", "Calibrate the detection threshold", cmd_calibrate},
      {"evaluate", "Accuracy table and verdicts", cmd_evaluate},
      {"drift", "Data drift report", cmd_drift},
      {"roc", "ROC curves per attack", cmd_roc},
  };
  for (const auto& [name, help, fn] : commands) app.add_subcommand(name, help);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("pmdef");
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.get_formatter()->make_help(&app, app.get_name(), CLI::AppFormatMode::Normal);
    return 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  auto log = make_logger(err);
  try {
    Context c;
    c.log = log;
    c.workers = workers;
    c.config = load_experiment_config(config_path, seed);
    c.out = out_dir.empty() ? c.config.output_dir : fs::path(out_dir);
    fs::create_directories(c.out);
    for (const auto& [name, help, fn] : commands)
      if (name == command) fn(c);
    const std::string manifest = "manifest-" + command + ".json";
    std::ofstream(c.at(manifest), std::ios::binary)
        << make_manifest(command, c.config.source, c.config.seed, c.out, c.artifacts).dump(2) << "\n";
    log->info("{} done, wrote {} artifacts to {}", command, c.artifacts.size(), c.out.string());
    return 0;
  } catch (const ValidationError& e) {
    log->error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    log->error("{}", e.what());
    return 2;
  }
}

int run_cli(const std::vector<std::string>& args) { return run_cli(args, std::cout, std::cerr); }

}  // namespace pmdef
