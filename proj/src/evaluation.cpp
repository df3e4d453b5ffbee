#include "pmdef/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "pmdef/error.hpp"
#include "pmdef/rng.hpp"

namespace pmdef {

namespace {

constexpr int kKolmogorovTerms = 100;
constexpr double kSmallLambda = 1.18;

GroupStats group_stats(const std::vector<double>& v) {
  GroupStats g;
  g.size = v.size();
  if (v.empty()) return g;
  double mean = 0.0;
  for (double s : v) mean += s;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double s : v) var += (s - mean) * (s - mean);
  g.mean = mean;
  g.stddev = std::sqrt(var / static_cast<double>(v.size()));
  return g;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

nlohmann::json to_json(const GroupStats& g) {
  nlohmann::json j{{"size", g.size}};
  j["mean"] = g.mean ? nlohmann::json(*g.mean) : nlohmann::json(nullptr);
  j["std"] = g.stddev ? nlohmann::json(*g.stddev) : nlohmann::json(nullptr);
  return j;
}

void box_blur(std::span<const double> in, std::span<double> out, std::size_t h, std::size_t w, std::size_t c,
              int radius) {
  const auto r = static_cast<std::ptrdiff_t>(radius);
  const auto hh = static_cast<std::ptrdiff_t>(h), ww = static_cast<std::ptrdiff_t>(w);
  for (std::ptrdiff_t y = 0; y < hh; ++y)
    for (std::ptrdiff_t x = 0; x < ww; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double total = 0.0;
        int count = 0;
        for (std::ptrdiff_t dy = std::max<std::ptrdiff_t>(0, y - r); dy <= std::min(hh - 1, y + r); ++dy)
          for (std::ptrdiff_t dx = std::max<std::ptrdiff_t>(0, x - r); dx <= std::min(ww - 1, x + r); ++dx) {
            total += in[(static_cast<std::size_t>(dy) * w + static_cast<std::size_t>(dx)) * c + ch];
            ++count;
          }
        out[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * c + ch] = total / count;
      }
}

}  // namespace

nlohmann::json to_json(const RocCurve& roc) {
  return {{"fpr", roc.fpr}, {"tpr", roc.tpr}, {"thresholds", roc.thresholds}, {"auc", roc.auc}};
}

RocCurve roc_auc(std::span<const double> scores_normal, std::span<const double> scores_adversarial) {
  if (scores_normal.empty() || scores_adversarial.empty()) throw DataError("roc_auc: both score lists must be non-empty");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(scores_normal.size() + scores_adversarial.size());
  for (double s : scores_normal) items.push_back({s, false});
  for (double s : scores_adversarial) items.push_back({s, true});
  for (const auto& it : items)
    if (std::isnan(it.score)) throw DataError("roc_auc: NaN score");
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });

  const auto nn = static_cast<double>(scores_normal.size());
  const auto np = static_cast<double>(scores_adversarial.size());
  RocCurve roc;
  roc.fpr.push_back(0.0);
  roc.tpr.push_back(0.0);
  // Twice the area in units of single pairs; integer-valued, so exact.
  double twice_area = 0.0;
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < items.size();) {
    const double cut = items[i].score;
    double dtp = 0.0, dfp = 0.0;
    for (; i < items.size() && items[i].score == cut; ++i) (items[i].positive ? dtp : dfp) += 1.0;
    twice_area += dfp * (2.0 * tp + dtp);
    tp += dtp;
    fp += dfp;
    roc.fpr.push_back(fp / nn);
    roc.tpr.push_back(tp / np);
    roc.thresholds.push_back(cut);
  }
  roc.auc = twice_area / (2.0 * nn * np);
  return roc;
}

double kolmogorov_survival(double lambda) {
  if (std::isnan(lambda)) throw DataError("kolmogorov_survival: NaN");
  if (lambda <= 0.0) return 1.0;
  double p;
  if (lambda < kSmallLambda) {
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double cdf = 0.0;
    for (int k = 1; k <= kKolmogorovTerms; ++k) {
      const double odd = 2.0 * k - 1.0;
      cdf += std::exp(-odd * odd * pi2 / (8.0 * lambda * lambda));
    }
    p = 1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * cdf;
  } else {
    double total = 0.0;
    for (int k = 1; k <= kKolmogorovTerms; ++k)
      total += (k % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    p = 2.0 * total;
  }
  return std::clamp(p, 0.0, 1.0);
}

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DataError("ks_two_sample: samples must be non-empty");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  for (double v : sa)
    if (std::isnan(v)) throw DataError("ks_two_sample: NaN value");
  for (double v : sb)
    if (std::isnan(v)) throw DataError("ks_two_sample: NaN value");
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const auto na = static_cast<double>(sa.size()), nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < sa.size() || j < sb.size()) {
    double v;
    if (j == sb.size() || (i < sa.size() && sa[i] <= sb[j]))
      v = sa[i];
    else
      v = sb[j];
    while (i < sa.size() && sa[i] == v) ++i;
    while (j < sb.size() && sb[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = na * nb / (na + nb);
  return {d, kolmogorov_survival(std::sqrt(ne) * d)};
}

CorruptionKind corruption_kind_from_string(const std::string& s) {
  if (s == "gaussian_noise") return CorruptionKind::gaussian_noise;
  if (s == "blur") return CorruptionKind::blur;
  if (s == "brightness") return CorruptionKind::brightness;
  if (s == "contrast") return CorruptionKind::contrast;
  throw ParameterError("unknown corruption kind '" + s + "'");
}

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise:
      return "gaussian_noise";
    case CorruptionKind::blur:
      return "blur";
    case CorruptionKind::brightness:
      return "brightness";
    case CorruptionKind::contrast:
      return "contrast";
  }
  return "gaussian_noise";
}

double corruption_parameter(CorruptionKind kind, int severity) {
  if (severity < 1 || severity > 5) throw ParameterError("corruption severity must be in 1..5");
  static constexpr double noise[] = {0.04, 0.06, 0.08, 0.09, 0.10};
  static constexpr double brightness[] = {0.1, 0.2, 0.3, 0.4, 0.5};
  static constexpr double contrast[] = {0.75, 0.6, 0.45, 0.3, 0.15};
  const auto s = static_cast<std::size_t>(severity - 1);
  switch (kind) {
    case CorruptionKind::gaussian_noise:
      return noise[s];
    case CorruptionKind::blur:
      return static_cast<double>(severity);
    case CorruptionKind::brightness:
      return brightness[s];
    case CorruptionKind::contrast:
      return contrast[s];
  }
  throw ParameterError("unknown corruption kind");
}

Tensor corrupt_dataset(const Tensor& x, CorruptionKind kind, int severity, std::uint64_t seed) {
  const double param = corruption_parameter(kind, severity);
  if (x.rank() != 4) throw DimensionError("corrupt_dataset expects [N, H, W, C], got " + to_string(x.shape()));
  Tensor out(x.shape());
  const std::size_t n = x.batch();
  switch (kind) {
    case CorruptionKind::gaussian_noise: {
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> noise(0.0, param);
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + noise(rng);
      break;
    }
    case CorruptionKind::blur:
      for (std::size_t i = 0; i < n; ++i)
        box_blur(x.row(i), out.row(i), x.dim(1), x.dim(2), x.dim(3), static_cast<int>(param));
      break;
    case CorruptionKind::brightness:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + param;
      break;
    case CorruptionKind::contrast:
      for (std::size_t i = 0; i < n; ++i) {
        auto in = x.row(i);
        auto o = out.row(i);
        double mean = 0.0;
        for (double v : in) mean += v;
        mean /= static_cast<double>(in.size());
        for (std::size_t j = 0; j < in.size(); ++j) o[j] = (in[j] - mean) * param + mean;
      }
      break;
  }
  for (double& v : out.values()) v = std::clamp(v, kDataMin, kDataMax);
  return out;
}

const DriftRow* DriftReport::find(const std::string& kind, int severity) const {
  for (const auto& r : rows)
    if (r.kind == kind && r.severity == severity) return &r;
  return nullptr;
}

std::string DriftReport::to_csv() const {
  std::ostringstream os;
  os << "kind,severity,instances,accuracy,harmful_n,harmful_mean,harmful_std,not_harmful_n,not_harmful_mean,"
        "not_harmful_std,other_n,ks_statistic,ks_p_value\n";
  for (const auto& r : rows) {
    os << r.kind << ',' << r.severity << ',' << r.instances << ',' << fmt(r.accuracy) << ',' << r.harmful.size << ','
       << fmt(r.harmful.mean) << ',' << fmt(r.harmful.stddev) << ',' << r.not_harmful.size << ','
       << fmt(r.not_harmful.mean) << ',' << fmt(r.not_harmful.stddev) << ',' << r.other.size << ','
       << (r.ks ? fmt(r.ks->statistic) : "") << ',' << (r.ks ? fmt(r.ks->p_value) : "") << '\n';
  }
  return os.str();
}

nlohmann::json to_json(const DriftReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json j{{"kind", r.kind},
                     {"severity", r.severity},
                     {"instances", r.instances},
                     {"accuracy", r.accuracy},
                     {"harmful", to_json(r.harmful)},
                     {"not_harmful", to_json(r.not_harmful)},
                     {"other", to_json(r.other)}};
    j["ks"] = r.ks ? nlohmann::json{{"statistic", r.ks->statistic}, {"p_value", r.ks->p_value}} : nlohmann::json(nullptr);
    rows.push_back(std::move(j));
  }
  return {{"rows", rows}};
}

DriftReport drift_report(const Model& classifier, const Model& autoencoder, const Dataset& clean,
                         std::span<const CorruptionKind> kinds, std::span<const int> severities, std::uint64_t seed,
                         const ScoreOptions& options) {
  clean.validate();
  if (kinds.empty()) throw ConfigError("drift_report: no corruption kinds");
  const std::vector<int> clean_pred = predict_labels(classifier, clean.images);

  struct Accumulator {
    std::vector<double> harmful, not_harmful, other;
    std::size_t correct = 0, total = 0;
  };
  auto add = [&](Accumulator& acc, const Tensor& images) {
    const std::vector<int> pred = predict_labels(classifier, images);
    const std::vector<double> scores = adversarial_score(classifier, autoencoder, images, options);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool was_correct = clean_pred[i] == clean.labels[i];
      const bool is_correct = pred[i] == clean.labels[i];
      if (pred[i] == clean_pred[i])
        acc.not_harmful.push_back(scores[i]);
      else if (was_correct && !is_correct)
        acc.harmful.push_back(scores[i]);
      else
        acc.other.push_back(scores[i]);
      acc.correct += is_correct ? 1 : 0;
      ++acc.total;
    }
  };
  auto to_row = [](const std::string& kind, int severity, const Accumulator& acc) {
    DriftRow r;
    r.kind = kind;
    r.severity = severity;
    r.instances = acc.total;
    r.accuracy = acc.total ? static_cast<double>(acc.correct) / static_cast<double>(acc.total) : 0.0;
    r.harmful = group_stats(acc.harmful);
    r.not_harmful = group_stats(acc.not_harmful);
    r.other = group_stats(acc.other);
    if (!acc.harmful.empty() && !acc.not_harmful.empty()) r.ks = ks_two_sample(acc.harmful, acc.not_harmful);
    return r;
  };

  DriftReport report;
  for (int severity : severities) {
    if (severity == 0) {
      Accumulator acc;
      add(acc, clean.images);
      report.rows.push_back(to_row("none", 0, acc));
      continue;
    }
    Accumulator pooled;
    for (CorruptionKind kind : kinds) {
      const std::string name = to_string(kind);
      const std::uint64_t stage = derive_seed(derive_seed(seed, std::string_view(name)), static_cast<std::uint64_t>(severity));
      Accumulator acc;
      add(acc, corrupt_dataset(clean.images, kind, severity, stage));
      report.rows.push_back(to_row(name, severity, acc));
      for (double s : acc.harmful) pooled.harmful.push_back(s);
      for (double s : acc.not_harmful) pooled.not_harmful.push_back(s);
      for (double s : acc.other) pooled.other.push_back(s);
      pooled.correct += acc.correct;
      pooled.total += acc.total;
    }
    report.rows.push_back(to_row("all", severity, pooled));
  }
  return report;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw DimensionError("accuracy: prediction and label counts differ");
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double AccuracyTable::at(const std::string& row, const std::string& column) const {
  const auto r = std::find(rows.begin(), rows.end(), row);
  const auto c = std::find(columns.begin(), columns.end(), column);
  if (r == rows.end() || c == columns.end()) throw ConfigError("accuracy table has no cell " + row + "/" + column);
  return values[static_cast<std::size_t>(r - rows.begin())][static_cast<std::size_t>(c - columns.begin())];
}

std::string AccuracyTable::to_csv() const {
  std::ostringstream os;
  os << "attack";
  for (const auto& c : columns) os << ',' << c;
  os << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << rows[r];
    for (double v : values[r]) os << ',' << fmt(v);
    os << '\n';
  }
  return os.str();
}

AccuracyTable accuracy_report(const Model& classifier, std::span<const DefenceColumn> defences, const Dataset& clean,
                              std::span<const AttackSet> attacks, const ScoreOptions& options) {
  for (const auto& d : defences)
    if (d.autoencoder == nullptr) throw ConfigError("accuracy_report: no checkpoint for column " + d.name);
  AccuracyTable table;
  table.columns = {"No Attack", "No Defence"};
  for (const auto& d : defences) table.columns.push_back(d.name);
  for (const auto& d : defences)
    if (d.threshold) table.columns.push_back(d.name + " (gated)");

  auto labels_of = [](const std::vector<DefenceVerdict>& v) {
    std::vector<int> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i].label;
    return out;
  };
  auto row = [&](const Tensor& originals, const Tensor& inputs, std::span<const int> labels) {
    std::vector<double> values{accuracy(predict_labels(classifier, originals), labels),
                               accuracy(predict_labels(classifier, inputs), labels)};
    for (const auto& d : defences)
      values.push_back(accuracy(labels_of(detect_and_correct(classifier, *d.autoencoder, inputs, kNegativeInfinity, options)),
                                labels));
    for (const auto& d : defences)
      if (d.threshold)
        values.push_back(
            accuracy(labels_of(detect_and_correct(classifier, *d.autoencoder, inputs, *d.threshold, options)), labels));
    return values;
  };

  clean.validate();
  table.rows.push_back("none");
  table.values.push_back(row(clean.images, clean.images, clean.labels));
  for (const auto& a : attacks) {
    if (a.batch == nullptr) throw ConfigError("accuracy_report: no adversarial batch for " + a.name);
    if (a.batch->labels.size() != a.batch->originals.batch())
      throw DataError("accuracy_report: adversarial batch " + a.name + " has no true labels");
    table.rows.push_back(a.name);
    table.values.push_back(row(a.batch->originals, a.batch->adversarials, a.batch->labels));
  }
  return table;
}

}  // namespace pmdef
