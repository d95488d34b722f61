#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace pead::metrics {

/// Fraction of prompts judged extracted. Throws std::invalid_argument when
/// `verdicts` is empty.
double uncovered_rate(const std::map<std::string, bool>& verdicts);

/// Uncovered rate of one attack in one repetition.
struct RunScore {
  std::string attack_id;
  int repetition = 0;
  double ur = 0.0;
};

/// Uncovered rates for one criterion. `per_attack` holds the mean over
/// repetitions for each attack; `mean` and `std` are taken across attacks
/// (population std). `reps_std` is the population std over repetitions for
/// each attack and `mean_reps_std` its average.
struct URReport {
  std::string criterion;
  std::map<std::string, double> per_attack;
  double mean = 0.0;
  double std = 0.0;
  std::map<std::string, double> reps_std;
  double mean_reps_std = 0.0;
};

URReport aggregate_runs(std::span<const RunScore> runs, std::string criterion = {});

nlohmann::json to_json(const URReport& report);

/// CSV with columns criterion, mean, std, then one column per attack id
/// (union over all reports, sorted). Missing cells are left empty.
std::string to_csv(std::span<const URReport> reports);

/// "0.50 ± 0.50"
std::string format_cell(const URReport& report);

struct ClassificationScores {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Binary metrics with `positive_label` as the positive class. Anything else
/// (including an abstained, empty prediction) counts as negative. Zero
/// denominators give 0.
ClassificationScores classification_metrics(std::span<const std::string> preds,
                                            std::span<const std::string> golds,
                                            std::string_view positive_label);

/// Maps free text onto a label. Labels are matched as whole word-token runs,
/// case-insensitively; the one occurring earliest wins (longer label on a tie).
/// nullopt means abstain.
std::optional<std::string> parse_label(std::string_view response,
                                       std::span<const std::string> label_set);

enum class MetricName { accuracy, precision, recall, f1 };

std::optional<MetricName> parse_metric(std::string_view name);
std::string_view metric_name(MetricName m);

/// Dataset-averaged score of one prompt on one task.
struct SoftScore {
  std::string task_id;
  MetricName metric = MetricName::accuracy;
  double score = 0.0;
};

struct SoftEvalReport {
  std::string task_id;
  MetricName metric = MetricName::accuracy;
  double original_score = 0.0;
  double extracted_score = 0.0;
  double delta = 0.0;
  bool within_tolerance = false;
};

inline constexpr double kDefaultSoftTolerance = 0.05;

/// Compares the original prompt's score with the extracted prompt's score.
/// Throws std::invalid_argument on a task/metric mismatch or negative tolerance.
SoftEvalReport soft_delta(const SoftScore& original, const SoftScore& extracted,
                          double tolerance = kDefaultSoftTolerance);

/// Spearman rank correlation, average ranks for ties. Returns NaN when either
/// input is constant. Throws std::invalid_argument for mismatched lengths or
/// fewer than two points.
double spearman(std::span<const double> xs, std::span<const double> ys);

/// Ranks starting at 1, ties share the average rank.
std::vector<double> average_ranks(std::span<const double> values);

} // namespace pead::metrics
