#include "pmdef/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "pmdef/binary_io.hpp"
#include "pmdef/error.hpp"
#include "pmdef/ops.hpp"
#include "pmdef/projection.hpp"
#include "pmdef/tape.hpp"

namespace pmdef {

namespace {

constexpr std::size_t kAttackChunk = 256;
constexpr double kTanhShrink = 1.0 - 1e-6;
constexpr double kConstantCap = 1e10;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_labels(const Target& target, const Tensor& x, std::span<const int> y) {
  check_input(target.input_shape(), x, "attack");
  if (y.size() != x.batch())
    throw DimensionError("attack: " + std::to_string(y.size()) + " labels for " + std::to_string(x.batch()) +
                         " instances");
  const auto k = static_cast<int>(target.num_classes());
  for (int label : y)
    if (label < 0 || label >= k) throw DataError("attack: label " + std::to_string(label) + " out of range");
}

Tensor loss_gradient(const Target& target, const Tensor& x, std::span<const int> y) {
  Tape tape;
  Var in = tape.leaf(x, true);
  Var loss = ops::cross_entropy(tape, target.logits(tape, in), y);
  tape.backward(loss);
  return tape.grad(in);
}

AdversarialBatch empty_batch(const Tensor& x) {
  AdversarialBatch batch;
  batch.originals = x;
  batch.adversarials = x;
  return batch;
}

AdversarialBatch fgsm_raw(const Target& target, const Tensor& x, std::span<const int> y, double epsilon) {
  AdversarialBatch batch = empty_batch(x);
  const Tensor g = loss_gradient(target, x, y);
  Tensor raw(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    raw[i] = epsilon * sign(g[i]);
    batch.adversarials[i] = std::clamp(x[i] + raw[i], kDataMin, kDataMax);
  }
  batch.diagnostics.raw_perturbation = std::move(raw);
  return batch;
}

AdversarialBatch slide_raw(const Target& target, const Tensor& x, std::span<const int> y, const SlideConfig& cfg) {
  AdversarialBatch batch = empty_batch(x);
  const std::size_t n = x.batch(), width = x.row_size();
  auto& diag = batch.diagnostics;
  diag.direction_nonzeros.assign(n, {});
  diag.iterate_l1.assign(n, {});
  diag.skipped_iterations.assign(n, 0);
  Tensor delta(x.shape());
  std::vector<double> magnitude(width), e(width);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Tensor g = loss_gradient(target, batch.adversarials, y);
    for (std::size_t i = 0; i < n; ++i) {
      auto gi = g.row(i);
      std::transform(gi.begin(), gi.end(), magnitude.begin(), [](double v) { return std::abs(v); });
      const double threshold = percentile(magnitude, cfg.percentile);
      std::size_t nonzero = 0;
      double norm = 0.0;
      for (std::size_t j = 0; j < width; ++j) {
        e[j] = magnitude[j] > threshold ? sign(gi[j]) : 0.0;
        if (e[j] != 0.0) {
          ++nonzero;
          norm += 1.0;
        }
      }
      auto d = delta.row(i);
      auto xi = x.row(i);
      if (nonzero == 0) {
        ++diag.skipped_iterations[i];
      } else {
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < width; ++j) d[j] += cfg.step * e[j] / norm;
        project_l1_ball(d, cfg.l1_bound);
        for (std::size_t j = 0; j < width; ++j) d[j] = std::clamp(xi[j] + d[j], kDataMin, kDataMax) - xi[j];
      }
      double l1 = 0.0;
      for (double v : d) l1 += std::abs(v);
      diag.direction_nonzeros[i].push_back(nonzero);
      diag.iterate_l1[i].push_back(l1);
      auto adv = batch.adversarials.row(i);
      for (std::size_t j = 0; j < width; ++j) adv[j] = xi[j] + d[j];
    }
  }
  return batch;
}

struct CwState {
  const Target& target;
  const Tensor& x;
  std::span<const int> y;
  const CwConfig& cfg;
  std::size_t width;
  Tensor w, m, v;
  std::vector<double> c;
  std::vector<std::uint8_t> failed;
  std::vector<std::uint8_t> round_success;
  std::vector<double> best_l2;
  Tensor best;
  std::size_t t = 0;

  // One Adam iteration over `rows`. Rows whose objective or gradient is not
  // finite are marked failed; a throwing batch is retried row by row.
  void iterate(const std::vector<std::size_t>& rows) {
    if (rows.empty()) return;
    try {
      iterate_checked(rows);
    } catch (const EvaluationError&) {
      if (rows.size() == 1) {
        failed[rows[0]] = 1;
        return;
      }
      for (std::size_t r : rows) iterate({r});
    }
  }

  void iterate_checked(const std::vector<std::size_t>& rows) {
    const std::size_t k = rows.size();
    Shape shape = x.shape();
    shape[0] = k;
    Tensor wk(shape), xk(shape), ck({k});
    std::vector<int> yk(k);
    for (std::size_t r = 0; r < k; ++r) {
      std::copy_n(w.row(rows[r]).data(), width, wk.row(r).data());
      std::copy_n(x.row(rows[r]).data(), width, xk.row(r).data());
      ck[r] = c[rows[r]];
      yk[r] = y[rows[r]];
    }
    Tape tape;
    Var wv = tape.leaf(std::move(wk), true);
    const CwTerms terms = cw_objective(tape, target, wv, tape.constant(std::move(xk)), yk, tape.constant(ck),
                                       cfg.confidence);
    Var objective = terms.objective, margin = terms.margin, dist = terms.squared_l2, xp = terms.adversarial;
    Var z = terms.logits;
    tape.backward(ops::sum(tape, objective));

    const Tensor& obj = tape.value(objective);
    const Tensor& marg = tape.value(margin);
    const Tensor& d2 = tape.value(dist);
    const Tensor& adv = tape.value(xp);
    const Tensor& grad = tape.grad(wv);
    const std::vector<int> pred = argmax_rows(tape.value(z));
    ++t;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t i = rows[r];
      auto gr = grad.row(r);
      bool finite = std::isfinite(obj[r]);
      for (double gv : gr) finite = finite && std::isfinite(gv);
      if (!finite) {
        failed[i] = 1;
        continue;
      }
      if (pred[r] != yk[r] && -marg[r] >= cfg.confidence) {
        round_success[i] = 1;
        const double l2 = std::sqrt(d2[r]);
        if (l2 < best_l2[i]) {
          best_l2[i] = l2;
          std::copy_n(adv.row(r).data(), width, best.row(i).data());
        }
      }
      auto wi = w.row(i);
      auto mi = m.row(i);
      auto vi = v.row(i);
      for (std::size_t j = 0; j < width; ++j) {
        mi[j] = b1 * mi[j] + (1.0 - b1) * gr[j];
        vi[j] = b2 * vi[j] + (1.0 - b2) * gr[j] * gr[j];
        wi[j] -= cfg.learning_rate * (mi[j] / c1) / (std::sqrt(vi[j] / c2) + eps);
      }
    }
  }
};

}  // namespace

CwTerms cw_objective(Tape& tape, const Target& target, Var w, Var x, std::span<const int> y, Var c, double confidence) {
  CwTerms t;
  t.adversarial = ops::scale(tape, ops::add_scalar(tape, ops::tanh(tape, w), 1.0), 0.5);
  t.squared_l2 = ops::row_sum(tape, ops::square(tape, ops::sub(tape, t.adversarial, x)));
  t.logits = target.logits(tape, t.adversarial);
  t.margin = ops::sub(tape, ops::pick(tape, t.logits, y), ops::max_other(tape, t.logits, y));
  t.objective = ops::add(tape, t.squared_l2, ops::mul(tape, c, ops::maximum(tape, t.margin, -confidence)));
  return t;
}

namespace {

AdversarialBatch cw_raw(const Target& target, const Tensor& x, std::span<const int> y, const CwConfig& cfg) {
  AdversarialBatch batch = empty_batch(x);
  const std::size_t n = x.batch();
  CwState s{target, x, y, cfg, x.row_size(), Tensor(x.shape()), Tensor(x.shape()), Tensor(x.shape()),
            std::vector<double>(n, cfg.c_init), std::vector<std::uint8_t>(n, 0), std::vector<std::uint8_t>(n, 0),
            std::vector<double>(n, std::numeric_limits<double>::infinity()), x};
  Tensor w0(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) w0[i] = std::atanh((2.0 * x[i] - 1.0) * kTanhShrink);
  std::vector<double> lo(n, 0.0), hi(n, kConstantCap);

  for (std::size_t round = 0; round < cfg.binary_steps; ++round) {
    s.w = w0;
    s.m = Tensor(x.shape());
    s.v = Tensor(x.shape());
    s.t = 0;
    std::fill(s.round_success.begin(), s.round_success.end(), 0);
    for (std::size_t it = 0; it < cfg.max_iter; ++it) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < n; ++i)
        if (!s.failed[i]) rows.push_back(i);
      if (rows.empty()) break;
      s.iterate(rows);
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (s.failed[i]) continue;
      if (s.round_success[i]) {
        hi[i] = std::min(hi[i], s.c[i]);
        s.c[i] = (lo[i] + hi[i]) / 2.0;
      } else {
        lo[i] = std::max(lo[i], s.c[i]);
        s.c[i] = hi[i] < kConstantCap ? (lo[i] + hi[i]) / 2.0 : std::min(s.c[i] * 10.0, kConstantCap);
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(s.best_l2[i])) continue;
    std::copy_n(s.best.row(i).data(), s.width, batch.adversarials.row(i).data());
  }
  batch.diagnostics.non_finite = std::move(s.failed);
  batch.diagnostics.final_constant = std::move(s.c);
  return batch;
}

std::vector<double> row_norm(const Tensor& a, const Tensor& b, double p) {
  std::vector<double> out(a.batch());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto ra = a.row(i), rb = b.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < ra.size(); ++j) {
      const double d = std::abs(ra[j] - rb[j]);
      if (std::isinf(p))
        acc = std::max(acc, d);
      else if (p == 1.0)
        acc += d;
      else
        acc += d * d;
    }
    out[i] = p == 2.0 ? std::sqrt(acc) : acc;
  }
  return out;
}

template <class T>
void append(std::vector<T>& to, const std::vector<T>& from) {
  to.insert(to.end(), from.begin(), from.end());
}

AdversarialBatch merge(std::vector<AdversarialBatch>& parts) {
  if (parts.size() == 1) return std::move(parts[0]);
  AdversarialBatch out;
  std::vector<Tensor> originals, adversarials, raw;
  for (auto& p : parts) {
    originals.push_back(std::move(p.originals));
    adversarials.push_back(std::move(p.adversarials));
    if (!p.diagnostics.raw_perturbation.empty()) raw.push_back(std::move(p.diagnostics.raw_perturbation));
    auto& d = out.diagnostics;
    append(d.direction_nonzeros, p.diagnostics.direction_nonzeros);
    append(d.iterate_l1, p.diagnostics.iterate_l1);
    append(d.skipped_iterations, p.diagnostics.skipped_iterations);
    append(d.non_finite, p.diagnostics.non_finite);
    append(d.final_constant, p.diagnostics.final_constant);
  }
  out.originals = concat_rows(originals);
  out.adversarials = concat_rows(adversarials);
  if (!raw.empty()) out.diagnostics.raw_perturbation = concat_rows(raw);
  return out;
}

AdversarialBatch dispatch(const Target& target, const Tensor& x, std::span<const int> y, const AttackParams& params) {
  return std::visit(Overloaded{
                        [&](const FgsmConfig& p) { return fgsm_raw(target, x, y, p.epsilon); },
                        [&](const SlideConfig& p) { return slide_raw(target, x, y, p); },
                        [&](const CwConfig& p) { return cw_raw(target, x, y, p); },
                    },
                    params);
}

AdversarialBatch attack_chunked(const Target& target, const Tensor& x, std::span<const int> y,
                                const AttackParams& params) {
  std::vector<AdversarialBatch> parts;
  for (std::size_t begin = 0; begin < x.batch(); begin += kAttackChunk) {
    const std::size_t end = std::min(begin + kAttackChunk, x.batch());
    parts.push_back(dispatch(target, x.rows(begin, end), y.subspan(begin, end - begin), params));
  }
  if (parts.empty()) return empty_batch(x);
  return merge(parts);
}

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ParameterError(std::string(what) + " must be positive");
}

const char* to_string(TargetMode mode) { return mode == TargetMode::grey_box ? "grey_box" : "white_box"; }
const char* to_string(LabelSource s) { return s == LabelSource::predicted ? "predicted" : "true_labels"; }

}  // namespace

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double AdversarialBatch::success_rate() const {
  if (success.empty()) return 0.0;
  return static_cast<double>(std::count(success.begin(), success.end(), 1)) / static_cast<double>(success.size());
}

void AttackConfig::validate() const {
  std::visit(Overloaded{
                 [](const FgsmConfig& p) { require_positive(p.epsilon, "fgsm epsilon"); },
                 [](const SlideConfig& p) {
                   if (!(p.percentile > 0.0 && p.percentile < 100.0))
                     throw ParameterError("slide percentile must be in (0, 100)");
                   require_positive(p.step, "slide step");
                   require_positive(p.l1_bound, "slide l1 bound");
                 },
                 [](const CwConfig& p) {
                   require_positive(p.c_init, "cw initial constant");
                   require_positive(p.learning_rate, "cw learning rate");
                   if (p.binary_steps < 1) throw ParameterError("cw binary_steps must be at least 1");
                   if (!(p.confidence >= 0.0)) throw ParameterError("cw confidence must be non-negative");
                 },
             },
             params);
}

std::string attack_kind(const AttackConfig& config) {
  return std::visit(Overloaded{
                        [](const FgsmConfig&) { return std::string("fgsm"); },
                        [](const SlideConfig&) { return std::string("slide"); },
                        [](const CwConfig&) { return std::string("cw_l2"); },
                    },
                    config.params);
}

nlohmann::json to_json(const AttackConfig& config) {
  nlohmann::json j;
  j["name"] = config.name;
  j["kind"] = attack_kind(config);
  j["mode"] = to_string(config.mode);
  j["label_source"] = to_string(config.label_source);
  j["seed"] = config.seed;
  std::visit(Overloaded{
                 [&](const FgsmConfig& p) { j["epsilon"] = p.epsilon; },
                 [&](const SlideConfig& p) {
                   j["percentile"] = p.percentile;
                   j["step"] = p.step;
                   j["steps"] = p.steps;
                   j["l1_bound"] = p.l1_bound;
                 },
                 [&](const CwConfig& p) {
                   j["c_init"] = p.c_init;
                   j["binary_steps"] = p.binary_steps;
                   j["max_iter"] = p.max_iter;
                   j["learning_rate"] = p.learning_rate;
                   j["confidence"] = p.confidence;
                 },
             },
             config.params);
  return j;
}

AttackConfig attack_config_from_json(const nlohmann::json& j) {
  try {
    AttackConfig c;
    const std::string kind = j.at("kind").get<std::string>();
    c.name = j.value("name", kind);
    if (kind == "fgsm") {
      FgsmConfig p;
      p.epsilon = j.value("epsilon", p.epsilon);
      c.params = p;
    } else if (kind == "slide") {
      SlideConfig p;
      p.percentile = j.value("percentile", p.percentile);
      p.step = j.value("step", p.step);
      p.steps = j.value("steps", p.steps);
      p.l1_bound = j.value("l1_bound", p.l1_bound);
      c.params = p;
    } else if (kind == "cw_l2") {
      CwConfig p;
      p.c_init = j.value("c_init", p.c_init);
      p.binary_steps = j.value("binary_steps", p.binary_steps);
      p.max_iter = j.value("max_iter", p.max_iter);
      p.learning_rate = j.value("learning_rate", p.learning_rate);
      p.confidence = j.value("confidence", p.confidence);
      c.params = p;
    } else {
      throw ConfigError("unknown attack kind '" + kind + "'");
    }
    const std::string mode = j.value("mode", std::string("grey_box"));
    if (mode == "grey_box")
      c.mode = TargetMode::grey_box;
    else if (mode == "white_box")
      c.mode = TargetMode::white_box;
    else
      throw ConfigError("unknown target mode '" + mode + "'");
    const std::string source = j.value("label_source", std::string("predicted"));
    if (source == "predicted")
      c.label_source = LabelSource::predicted;
    else if (source == "true_labels")
      c.label_source = LabelSource::true_labels;
    else
      throw ConfigError("unknown label source '" + source + "'");
    c.seed = j.value("seed", std::uint64_t{0});
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("attack config: ") + e.what());
  }
}

void finalize_batch(const Target& target, AdversarialBatch& batch) {
  for (double v : batch.adversarials.values())
    if (!(v >= kDataMin && v <= kDataMax)) throw EvaluationError("adversarial outside the data domain");
  batch.original_predictions = predict_labels(target, batch.originals);
  batch.adversarial_predictions = predict_labels(target, batch.adversarials);
  const std::size_t n = batch.originals.batch();
  batch.success.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    batch.success[i] = batch.original_predictions[i] != batch.adversarial_predictions[i] ? 1 : 0;
  batch.l1 = row_norm(batch.adversarials, batch.originals, 1.0);
  batch.l2 = row_norm(batch.adversarials, batch.originals, 2.0);
  batch.linf = row_norm(batch.adversarials, batch.originals, std::numeric_limits<double>::infinity());
}

AdversarialBatch fgsm(const Target& target, const Tensor& x, std::span<const int> y, double epsilon) {
  require_positive(epsilon, "fgsm epsilon");
  check_labels(target, x, y);
  AdversarialBatch batch = attack_chunked(target, x, y, FgsmConfig{epsilon});
  batch.config = {"fgsm", FgsmConfig{epsilon}};
  batch.labels.assign(y.begin(), y.end());
  finalize_batch(target, batch);
  return batch;
}

AdversarialBatch slide(const Target& target, const Tensor& x, std::span<const int> y, const SlideConfig& config) {
  AttackConfig ac{"slide", config};
  ac.validate();
  check_labels(target, x, y);
  AdversarialBatch batch = attack_chunked(target, x, y, config);
  batch.config = ac;
  batch.labels.assign(y.begin(), y.end());
  finalize_batch(target, batch);
  return batch;
}

AdversarialBatch cw_l2(const Target& target, const Tensor& x, std::span<const int> y, const CwConfig& config) {
  AttackConfig ac{"cw_l2", config};
  ac.validate();
  check_labels(target, x, y);
  AdversarialBatch batch = attack_chunked(target, x, y, config);
  batch.config = ac;
  batch.labels.assign(y.begin(), y.end());
  finalize_batch(target, batch);
  return batch;
}

AdversarialBatch cw_l2(const Target& target, const Tensor& x, const CwConfig& config) {
  check_input(target.input_shape(), x, "cw_l2");
  const std::vector<int> y = predict_labels(target, x);
  return cw_l2(target, x, y, config);
}

AdversarialBatch run_attack(const Target& target, const Tensor& x, std::span<const int> true_labels,
                            const AttackConfig& config, std::size_t workers) {
  config.validate();
  check_input(target.input_shape(), x, "attack");
  if (!true_labels.empty() && true_labels.size() != x.batch())
    throw DimensionError("attack: label count does not match instance count");
  std::vector<int> y;
  if (config.label_source == LabelSource::true_labels) {
    if (true_labels.empty()) throw ConfigError("attack: label_source true_labels requires labels");
    y.assign(true_labels.begin(), true_labels.end());
  } else {
    y = predict_labels(target, x);
  }
  check_labels(target, x, y);

  const std::size_t n = x.batch();
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  std::vector<AdversarialBatch> parts(workers);
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    const std::size_t begin = n * w / workers, end = n * (w + 1) / workers;
    try {
      parts[w] = attack_chunked(target, x.rows(begin, end), std::span<const int>(y).subspan(begin, end - begin),
                                config.params);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  AdversarialBatch batch = merge(parts);
  batch.config = config;
  batch.labels = true_labels.empty() ? y : std::vector<int>(true_labels.begin(), true_labels.end());
  finalize_batch(target, batch);
  return batch;
}

void save_adversarial_batch(const AdversarialBatch& batch, const std::filesystem::path& path) {
  nlohmann::json h;
  h["format"] = "pmdef-adversarial";
  h["version"] = 1;
  h["config"] = to_json(batch.config);
  h["seed"] = batch.config.seed;
  h["labels"] = batch.labels;
  h["original_predictions"] = batch.original_predictions;
  h["adversarial_predictions"] = batch.adversarial_predictions;
  h["success"] = batch.success;
  h["l1"] = batch.l1;
  h["l2"] = batch.l2;
  h["linf"] = batch.linf;
  const auto& d = batch.diagnostics;
  h["diagnostics"] = {{"direction_nonzeros", d.direction_nonzeros},
                      {"iterate_l1", d.iterate_l1},
                      {"skipped_iterations", d.skipped_iterations},
                      {"non_finite", d.non_finite},
                      {"final_constant", d.final_constant}};
  std::vector<NamedTensor> tensors{{"originals", batch.originals}, {"adversarials", batch.adversarials}};
  if (!d.raw_perturbation.empty()) tensors.push_back({"raw_perturbation", d.raw_perturbation});
  write_container(path, kAdversarialMagic, std::move(h), tensors);
}

AdversarialBatch load_adversarial_batch(const std::filesystem::path& path) {
  const Container c = read_container(path, kAdversarialMagic);
  try {
    const auto& h = c.header;
    AdversarialBatch b;
    b.config = attack_config_from_json(h.at("config"));
    b.originals = c.get("originals");
    b.adversarials = c.get("adversarials");
    if (c.contains("raw_perturbation")) b.diagnostics.raw_perturbation = c.get("raw_perturbation");
    h.at("labels").get_to(b.labels);
    h.at("original_predictions").get_to(b.original_predictions);
    h.at("adversarial_predictions").get_to(b.adversarial_predictions);
    h.at("success").get_to(b.success);
    h.at("l1").get_to(b.l1);
    h.at("l2").get_to(b.l2);
    h.at("linf").get_to(b.linf);
    const auto& d = h.at("diagnostics");
    d.at("direction_nonzeros").get_to(b.diagnostics.direction_nonzeros);
    d.at("iterate_l1").get_to(b.diagnostics.iterate_l1);
    d.at("skipped_iterations").get_to(b.diagnostics.skipped_iterations);
    d.at("non_finite").get_to(b.diagnostics.non_finite);
    d.at("final_constant").get_to(b.diagnostics.final_constant);
    const std::size_t n = b.originals.batch();
    if (b.adversarials.shape() != b.originals.shape() || b.success.size() != n || b.l2.size() != n ||
        b.original_predictions.size() != n || b.adversarial_predictions.size() != n)
      throw LengthMismatchError(path.string() + ": adversarial batch fields disagree in length");
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace pmdef
