#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fjd/scoring.hpp"

namespace fjd {

// Which end of the score axis is the jailbreak end. Confidence detectors use
// LowScoreIsJailbreak; the perplexity baseline defaults to the reverse.
enum class Orientation { LowScoreIsJailbreak, HighScoreIsJailbreak };

const char* to_string(Orientation orientation);
Orientation orientation_from_string(std::string_view text);

struct ScoredExample {
  std::string id;
  double score = 0.0;
  Label label = Label::Benign;
};

// Rank-based AUC (Mann-Whitney U): the probability that a random benign
// example lands on the benign side of a random jailbreak example under the
// orientation, with ties counting one half. Exact tie handling is the reason
// this is rank-based instead of a trapezoidal ROC sweep.
double auc(std::span<const ScoredExample> examples, Orientation orientation);

struct ConfusionMetrics {
  double fpr = 0.0;
  double tpr = 0.0;
  double f1 = 0.0;
  // Raw counts, jailbreak = positive class.
  int tp = 0;
  int fp = 0;
  int tn = 0;
  int fn = 0;
};

// Jailbreak is predicted when the score is strictly on the jailbreak side of
// the threshold; a score equal to the threshold is predicted benign, matching
// detect().
ConfusionMetrics confusion_metrics(std::span<const ScoredExample> examples,
                                   double threshold, Orientation orientation);

enum class ThresholdPolicyKind { MaxF1, YoudenJ, TargetFpr };

struct ThresholdPolicy {
  ThresholdPolicyKind kind = ThresholdPolicyKind::MaxF1;
  double target_fpr = 0.05;  // only for TargetFpr

  static ThresholdPolicy max_f1() { return {ThresholdPolicyKind::MaxF1, 0.0}; }
  static ThresholdPolicy youden_j() { return {ThresholdPolicyKind::YoudenJ, 0.0}; }
  static ThresholdPolicy target_fpr_rate(double rate) {
    return {ThresholdPolicyKind::TargetFpr, rate};
  }
};

std::string to_string(const ThresholdPolicy& policy);
ThresholdPolicy threshold_policy_from_string(std::string_view text);

// Scans candidate thresholds (midpoints between adjacent distinct scores plus
// a below-min and an above-max sentinel) and returns the policy's optimum.
// MaxF1 and YoudenJ break ties toward the smaller threshold. TargetFpr picks
// the operating point with the most flagged examples whose FPR stays <= rate.
double select_threshold(std::span<const ScoredExample> examples,
                        const ThresholdPolicy& policy,
                        Orientation orientation = Orientation::LowScoreIsJailbreak);

struct EvalProtocol {
  int repeats = 5;
  double subsample_fraction = 0.8;
  std::uint64_t seed = 0;
  bool stratified = false;  // the subsample is pooled by default
};

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample std, n-1 denominator; 0 when repeats == 1
};

struct RepeatDetail {
  double auc = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
  double f1 = 0.0;
  double threshold = 0.0;
  std::vector<std::uint32_t> indices;  // subsample, as indices into the input
};

struct EvalReport {
  MetricSummary auc;
  MetricSummary auc_reversed;  // 1 - auc per repeat; surfaces reversed regimes
  MetricSummary fpr;
  MetricSummary tpr;
  MetricSummary f1;
  int repeats = 0;
  double subsample_fraction = 0.0;
  std::uint64_t seed = 0;
  Orientation orientation = Orientation::LowScoreIsJailbreak;
  std::string config_fingerprint;
  std::vector<RepeatDetail> details;
};

// Either a fixed threshold (normal path: selected once on the train split) or
// a policy re-applied to every subsample.
using ThresholdSpec = std::variant<double, ThresholdPolicy>;

// The repeated-subsampling protocol: `repeats` seeded subsamples of
// ceil(fraction*n) examples drawn without replacement, all metrics per
// repeat, mean and sample std across repeats. Deterministic per seed. A
// subsample missing one class is redrawn up to 100 times before the run is
// declared degenerate.
EvalReport repeated_eval(std::span<const ScoredExample> examples,
                         const EvalProtocol& protocol,
                         const ThresholdSpec& threshold,
                         Orientation orientation);

// JSON document (stable key order) and a CSV row shaped like the result
// tables: method, attack, backend, then mean/std per metric.
std::string eval_report_to_json(const EvalReport& report, int indent = 2);
std::string eval_report_csv_header();
std::string eval_report_csv_row(const EvalReport& report, std::string_view method,
                                std::string_view attack, std::string_view backend);

}  // namespace fjd
