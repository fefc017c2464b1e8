#include "fjd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "fjd/errors.hpp"
#include "fjd/rng.hpp"

namespace fjd {

namespace {

struct ClassCounts {
  int jailbreak = 0;
  int benign = 0;
};

ClassCounts count_classes(std::span<const ScoredExample> examples) {
  ClassCounts counts;
  for (const ScoredExample& e : examples) {
    if (!std::isfinite(e.score)) {
      throw Error(ErrorKind::InvalidInput, "score for \"" + e.id + "\" is not finite");
    }
    (e.label == Label::Jailbreak ? counts.jailbreak : counts.benign)++;
  }
  return counts;
}

void require_both_classes(const ClassCounts& counts) {
  if (counts.jailbreak == 0 || counts.benign == 0) {
    throw Error(ErrorKind::DegenerateDataset,
                "need both classes, have " + std::to_string(counts.jailbreak) +
                    " jailbreak / " + std::to_string(counts.benign) + " benign");
  }
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

}  // namespace

const char* to_string(Orientation orientation) {
  return orientation == Orientation::LowScoreIsJailbreak ? "low-score-is-jailbreak"
                                                         : "high-score-is-jailbreak";
}

Orientation orientation_from_string(std::string_view text) {
  if (text == "low-score-is-jailbreak" || text == "low") return Orientation::LowScoreIsJailbreak;
  if (text == "high-score-is-jailbreak" || text == "high") return Orientation::HighScoreIsJailbreak;
  throw Error(ErrorKind::SchemaError, "unknown orientation \"" + std::string(text) + "\"");
}

double auc(std::span<const ScoredExample> examples, Orientation orientation) {
  const ClassCounts counts = count_classes(examples);
  require_both_classes(counts);

  const std::size_t n = examples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return examples[a].score < examples[b].score;
  });

  // Average ranks over tie groups, 1-based.
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && examples[order[j + 1]].score == examples[order[i]].score) ++j;
    const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }

  // Positive side: the class expected to carry the higher scores.
  const Label high_side =
      orientation == Orientation::LowScoreIsJailbreak ? Label::Benign : Label::Jailbreak;
  double rank_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (examples[k].label == high_side) rank_sum += rank[k];
  }
  const double n_high = high_side == Label::Benign ? counts.benign : counts.jailbreak;
  const double n_low = static_cast<double>(n) - n_high;
  const double u = rank_sum - n_high * (n_high + 1.0) / 2.0;
  return u / (n_high * n_low);
}

ConfusionMetrics confusion_metrics(std::span<const ScoredExample> examples,
                                   double threshold, Orientation orientation) {
  if (!std::isfinite(threshold)) {
    throw Error(ErrorKind::InvalidThreshold, "threshold is not finite");
  }
  const ClassCounts counts = count_classes(examples);
  require_both_classes(counts);

  ConfusionMetrics m;
  for (const ScoredExample& e : examples) {
    const bool flagged = orientation == Orientation::LowScoreIsJailbreak
                             ? e.score < threshold
                             : e.score > threshold;
    if (e.label == Label::Jailbreak) {
      flagged ? ++m.tp : ++m.fn;
    } else {
      flagged ? ++m.fp : ++m.tn;
    }
  }
  m.fpr = static_cast<double>(m.fp) / static_cast<double>(m.fp + m.tn);
  m.tpr = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  const int predicted_positive = m.tp + m.fp;
  const double precision =
      predicted_positive > 0 ? static_cast<double>(m.tp) / predicted_positive : 0.0;
  const double recall = m.tpr;
  m.f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  return m;
}

std::string to_string(const ThresholdPolicy& policy) {
  switch (policy.kind) {
    case ThresholdPolicyKind::MaxF1: return "max-f1";
    case ThresholdPolicyKind::YoudenJ: return "youden-j";
    case ThresholdPolicyKind::TargetFpr: {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "target-fpr:%g", policy.target_fpr);
      return buf;
    }
  }
  return "max-f1";
}

ThresholdPolicy threshold_policy_from_string(std::string_view text) {
  if (text == "max-f1") return ThresholdPolicy::max_f1();
  if (text == "youden-j") return ThresholdPolicy::youden_j();
  if (text.rfind("target-fpr:", 0) == 0) {
    const std::string rate_text(text.substr(std::string_view("target-fpr:").size()));
    try {
      const double rate = std::stod(rate_text);
      if (rate < 0.0 || rate > 1.0) throw std::out_of_range("rate");
      return ThresholdPolicy::target_fpr_rate(rate);
    } catch (const std::exception&) {
      throw Error(ErrorKind::SchemaError, "bad target-fpr rate \"" + rate_text + "\"");
    }
  }
  throw Error(ErrorKind::SchemaError, "unknown threshold policy \"" + std::string(text) + "\"");
}

namespace {

std::vector<double> candidate_thresholds(std::span<const ScoredExample> examples) {
  std::vector<double> scores;
  scores.reserve(examples.size());
  for (const ScoredExample& e : examples) scores.push_back(e.score);
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());

  std::vector<double> candidates;
  candidates.reserve(scores.size() + 1);
  double below = scores.front() - 0.5;
  double above = scores.back() + 0.5;
  // Confidence scores live in [0,1]; keep the sentinels there so downstream
  // detect() accepts the selected threshold. Unbounded scores (perplexity)
  // keep the raw sentinels.
  const bool unit_range = scores.front() >= 0.0 && scores.back() <= 1.0;
  if (unit_range) {
    below = std::max(0.0, below);
    above = std::min(1.0, above);
  }
  candidates.push_back(below);
  for (std::size_t i = 0; i + 1 < scores.size(); ++i) {
    candidates.push_back(0.5 * (scores[i] + scores[i + 1]));
  }
  candidates.push_back(above);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  return candidates;
}

}  // namespace

double select_threshold(std::span<const ScoredExample> examples,
                        const ThresholdPolicy& policy, Orientation orientation) {
  require_both_classes(count_classes(examples));
  const std::vector<double> candidates = candidate_thresholds(examples);

  if (policy.kind == ThresholdPolicyKind::TargetFpr) {
    // Most aggressive operating point whose FPR stays within budget. Under
    // the low orientation raising the threshold flags more, so scan upward;
    // under the high orientation it is the mirror image.
    std::optional<double> best;
    const bool ascending = orientation == Orientation::LowScoreIsJailbreak;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const double t = ascending ? candidates[i] : candidates[candidates.size() - 1 - i];
      if (confusion_metrics(examples, t, orientation).fpr <= policy.target_fpr) {
        best = t;
      }
    }
    if (!best) {
      // Even the flag-nothing sentinel exceeded the budget; impossible since
      // it has FPR 0, but keep a defined result.
      best = ascending ? candidates.front() : candidates.back();
    }
    return *best;
  }

  double best_threshold = candidates.front();
  double best_objective = -std::numeric_limits<double>::infinity();
  for (double t : candidates) {
    const ConfusionMetrics m = confusion_metrics(examples, t, orientation);
    const double objective =
        policy.kind == ThresholdPolicyKind::MaxF1 ? m.f1 : m.tpr - m.fpr;
    if (objective > best_objective) {
      best_objective = objective;
      best_threshold = t;
    }
  }
  return best_threshold;
}

namespace {

std::vector<std::uint32_t> draw_subsample(std::span<const ScoredExample> examples,
                                          const EvalProtocol& protocol, int repeat,
                                          int attempt) {
  rng::Engine eng = rng::seeded(protocol.seed, static_cast<std::uint64_t>(repeat),
                                static_cast<std::uint64_t>(attempt));
  const auto take = [&](std::vector<std::uint32_t>& pool, std::size_t m) {
    // Partial Fisher-Yates: after i swaps the prefix is the sample.
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = i + rng::next_below(eng, pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(m);
  };

  if (!protocol.stratified) {
    std::vector<std::uint32_t> pool(examples.size());
    std::iota(pool.begin(), pool.end(), 0u);
    const std::size_t m = static_cast<std::size_t>(
        std::ceil(protocol.subsample_fraction * static_cast<double>(examples.size())));
    take(pool, std::max<std::size_t>(1, m));
    return pool;
  }

  std::vector<std::uint32_t> result;
  for (Label label : {Label::Jailbreak, Label::Benign}) {
    std::vector<std::uint32_t> pool;
    for (std::uint32_t i = 0; i < examples.size(); ++i) {
      if (examples[i].label == label) pool.push_back(i);
    }
    if (pool.empty()) continue;
    const std::size_t m = static_cast<std::size_t>(
        std::ceil(protocol.subsample_fraction * static_cast<double>(pool.size())));
    take(pool, std::max<std::size_t>(1, m));
    result.insert(result.end(), pool.begin(), pool.end());
  }
  return result;
}

}  // namespace

EvalReport repeated_eval(std::span<const ScoredExample> examples,
                         const EvalProtocol& protocol, const ThresholdSpec& threshold,
                         Orientation orientation) {
  if (protocol.repeats < 1) {
    throw Error(ErrorKind::InvalidInput, "repeats must be >= 1");
  }
  if (!(protocol.subsample_fraction > 0.0) || protocol.subsample_fraction > 1.0) {
    throw Error(ErrorKind::InvalidInput, "subsample fraction must lie in (0, 1]");
  }
  require_both_classes(count_classes(examples));

  EvalReport report;
  report.repeats = protocol.repeats;
  report.subsample_fraction = protocol.subsample_fraction;
  report.seed = protocol.seed;
  report.orientation = orientation;

  std::vector<double> aucs, fprs, tprs, f1s, aucs_reversed;
  for (int repeat = 0; repeat < protocol.repeats; ++repeat) {
    std::vector<std::uint32_t> indices;
    std::vector<ScoredExample> subsample;
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      indices = draw_subsample(examples, protocol, repeat, attempt);
      subsample.clear();
      subsample.reserve(indices.size());
      int jail = 0, benign = 0;
      for (std::uint32_t idx : indices) {
        subsample.push_back(examples[idx]);
        (examples[idx].label == Label::Jailbreak ? jail : benign)++;
      }
      ok = jail > 0 && benign > 0;
    }
    if (!ok) {
      throw Error(ErrorKind::DegenerateDataset,
                  "subsample still single-class after 100 reseeded attempts");
    }

    RepeatDetail detail;
    detail.indices = std::move(indices);
    detail.threshold = std::holds_alternative<double>(threshold)
                           ? std::get<double>(threshold)
                           : select_threshold(subsample, std::get<ThresholdPolicy>(threshold),
                                              orientation);
    detail.auc = auc(subsample, orientation);
    const ConfusionMetrics m = confusion_metrics(subsample, detail.threshold, orientation);
    detail.fpr = m.fpr;
    detail.tpr = m.tpr;
    detail.f1 = m.f1;

    aucs.push_back(detail.auc);
    aucs_reversed.push_back(1.0 - detail.auc);
    fprs.push_back(detail.fpr);
    tprs.push_back(detail.tpr);
    f1s.push_back(detail.f1);
    report.details.push_back(std::move(detail));
  }

  report.auc = summarize(aucs);
  report.auc_reversed = summarize(aucs_reversed);
  report.fpr = summarize(fprs);
  report.tpr = summarize(tprs);
  report.f1 = summarize(f1s);
  return report;
}

std::string eval_report_to_json(const EvalReport& report, int indent) {
  nlohmann::ordered_json j;
  const auto summary = [](const MetricSummary& s) {
    return nlohmann::ordered_json{{"mean", s.mean}, {"std", s.stddev}};
  };
  j["auc"] = summary(report.auc);
  j["auc_reversed"] = summary(report.auc_reversed);
  j["fpr"] = summary(report.fpr);
  j["tpr"] = summary(report.tpr);
  j["f1"] = summary(report.f1);
  j["repeats"] = report.repeats;
  j["subsample_fraction"] = report.subsample_fraction;
  j["seed"] = report.seed;
  j["orientation"] = to_string(report.orientation);
  j["config_fingerprint"] = report.config_fingerprint;
  nlohmann::ordered_json details = nlohmann::ordered_json::array();
  for (const RepeatDetail& d : report.details) {
    details.push_back(nlohmann::ordered_json{{"auc", d.auc},
                                             {"fpr", d.fpr},
                                             {"tpr", d.tpr},
                                             {"f1", d.f1},
                                             {"threshold", d.threshold},
                                             {"indices", d.indices}});
  }
  j["repeats_detail"] = std::move(details);
  return j.dump(indent);
}

std::string eval_report_csv_header() {
  return "method,attack,backend,auc_mean,auc_std,fpr_mean,fpr_std,tpr_mean,tpr_std,"
         "f1_mean,f1_std,repeats,subsample_fraction,seed";
}

std::string eval_report_csv_row(const EvalReport& report, std::string_view method,
                                std::string_view attack, std::string_view backend) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%.*s,%.*s,%.*s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%d,%g,%llu",
                int(method.size()), method.data(), int(attack.size()), attack.data(),
                int(backend.size()), backend.data(), report.auc.mean, report.auc.stddev,
                report.fpr.mean, report.fpr.stddev, report.tpr.mean, report.tpr.stddev,
                report.f1.mean, report.f1.stddev, report.repeats, report.subsample_fraction,
                static_cast<unsigned long long>(report.seed));
  return buf;
}

}  // namespace fjd
