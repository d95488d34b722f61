#include "pead/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "pead/textmatch.hpp"

namespace pead::metrics {

namespace {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd population_stats(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  const double n = static_cast<double>(xs.size());
  out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(ss / n);
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

} // namespace

double uncovered_rate(const std::map<std::string, bool>& verdicts) {
  if (verdicts.empty()) throw std::invalid_argument("uncovered_rate: no verdicts");
  std::size_t hits = 0;
  for (const auto& [id, matched] : verdicts) hits += matched ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(verdicts.size());
}

URReport aggregate_runs(std::span<const RunScore> runs, std::string criterion) {
  if (runs.empty()) throw std::invalid_argument("aggregate_runs: no runs");
  std::map<std::string, std::vector<double>> by_attack;
  for (const auto& r : runs) by_attack[r.attack_id].push_back(r.ur);

  URReport report;
  report.criterion = std::move(criterion);
  std::vector<double> means;
  double reps_std_sum = 0.0;
  for (const auto& [attack, urs] : by_attack) {
    const auto s = population_stats(urs);
    report.per_attack[attack] = s.mean;
    report.reps_std[attack] = s.std;
    reps_std_sum += s.std;
    means.push_back(s.mean);
  }
  const auto across = population_stats(means);
  report.mean = across.mean;
  report.std = across.std;
  report.mean_reps_std = reps_std_sum / static_cast<double>(by_attack.size());
  return report;
}

nlohmann::json to_json(const URReport& report) {
  return {{"criterion", report.criterion},         {"mean", report.mean},
          {"std", report.std},                     {"per_attack", report.per_attack},
          {"reps_std", report.reps_std},           {"mean_reps_std", report.mean_reps_std}};
}

std::string to_csv(std::span<const URReport> reports) {
  std::set<std::string> attacks;
  for (const auto& r : reports) {
    for (const auto& [id, v] : r.per_attack) attacks.insert(id);
  }
  std::ostringstream out;
  out << "criterion,mean,std";
  for (const auto& a : attacks) out << ',' << a;
  out << '\n';
  for (const auto& r : reports) {
    out << r.criterion << ',' << fmt_double(r.mean) << ',' << fmt_double(r.std);
    for (const auto& a : attacks) {
      out << ',';
      if (auto it = r.per_attack.find(a); it != r.per_attack.end()) out << fmt_double(it->second);
    }
    out << '\n';
  }
  return out.str();
}

std::string format_cell(const URReport& report) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", report.mean, report.std);
  return buf;
}

ClassificationScores classification_metrics(std::span<const std::string> preds,
                                            std::span<const std::string> golds,
                                            std::string_view positive_label) {
  if (preds.size() != golds.size()) {
    throw std::invalid_argument("classification_metrics: predictions and golds differ in length");
  }
  if (preds.empty()) throw std::invalid_argument("classification_metrics: no examples");
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool pred_pos = preds[i] == positive_label;
    const bool gold_pos = golds[i] == positive_label;
    if (preds[i] == golds[i]) ++correct;
    if (pred_pos && gold_pos) ++tp;
    if (pred_pos && !gold_pos) ++fp;
    if (!pred_pos && gold_pos) ++fn;
  }
  ClassificationScores s;
  s.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());
  s.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  s.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  s.f1 = s.precision + s.recall == 0.0
             ? 0.0
             : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

std::optional<std::string> parse_label(std::string_view response,
                                       std::span<const std::string> label_set) {
  const textmatch::TokenizerConfig folded{textmatch::TokenMode::word, true};
  const auto resp = textmatch::tokenize(response, folded);
  std::optional<std::string> best;
  std::size_t best_pos = std::numeric_limits<std::size_t>::max();
  std::size_t best_len = 0;
  for (const auto& label : label_set) {
    const auto lab = textmatch::tokenize(label, folded);
    if (lab.empty()) continue;
    const auto it = std::search(resp.tokens.begin(), resp.tokens.end(), lab.tokens.begin(),
                                lab.tokens.end());
    if (it == resp.tokens.end()) continue;
    const auto pos = static_cast<std::size_t>(it - resp.tokens.begin());
    if (pos < best_pos || (pos == best_pos && lab.size() > best_len)) {
      best = label;
      best_pos = pos;
      best_len = lab.size();
    }
  }
  return best;
}

std::optional<MetricName> parse_metric(std::string_view name) {
  if (name == "accuracy") return MetricName::accuracy;
  if (name == "precision") return MetricName::precision;
  if (name == "recall") return MetricName::recall;
  if (name == "f1") return MetricName::f1;
  return std::nullopt;
}

std::string_view metric_name(MetricName m) {
  switch (m) {
  case MetricName::accuracy: return "accuracy";
  case MetricName::precision: return "precision";
  case MetricName::recall: return "recall";
  case MetricName::f1: return "f1";
  }
  return "accuracy";
}

SoftEvalReport soft_delta(const SoftScore& original, const SoftScore& extracted, double tolerance) {
  if (original.metric != extracted.metric) {
    throw std::invalid_argument("soft_delta: metric mismatch");
  }
  if (original.task_id != extracted.task_id) {
    throw std::invalid_argument("soft_delta: task mismatch");
  }
  if (!(tolerance >= 0.0)) throw std::invalid_argument("soft_delta: tolerance must be >= 0");
  SoftEvalReport r;
  r.task_id = original.task_id;
  r.metric = original.metric;
  r.original_score = original.score;
  r.extracted_score = extracted.score;
  r.delta = std::abs(original.score - extracted.score);
  r.within_tolerance = r.delta <= tolerance;
  return r;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("spearman: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("spearman: need at least two points");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const bool tied = std::set<double>(xs.begin(), xs.end()).size() != xs.size() ||
                    std::set<double>(ys.begin(), ys.end()).size() != ys.size();
  const double n = static_cast<double>(xs.size());
  if (!tied) {
    // Closed form; exact in floating point for integer ranks.
    double d2 = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
  }
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

} // namespace pead::metrics
