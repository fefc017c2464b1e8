#include "fjd/calibration.hpp"

#include <cmath>

#include <json.hpp>

#include "fjd/errors.hpp"

namespace fjd {

std::vector<double> TemperatureGrid::points() const {
  if (!(start > 0.0) || !std::isfinite(start)) {
    throw Error(ErrorKind::InvalidTemperature, "grid start must be > 0");
  }
  if (stop < start) {
    throw Error(ErrorKind::InvalidInput, "grid stop must be >= start");
  }
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw Error(ErrorKind::InvalidInput, "grid step must be > 0");
  }

  std::vector<double> values;
  for (int i = 0;; ++i) {
    double v = start + static_cast<double>(i) * step;
    v = std::nearbyint(v * 1e9) / 1e9;
    if (v > stop + step * 1e-9) break;
    values.push_back(v);
  }
  return values;
}

namespace {

std::vector<ScoredExample> score_at(std::span<const CalibrationExample> train, double tau,
                                    int k) {
  const Temperature temperature(tau);
  std::vector<ScoredExample> scored;
  scored.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const CalibrationExample& example = train[i];
    if (example.positions.size() < static_cast<std::size_t>(k)) {
      throw Error(ErrorKind::InsufficientTokens,
                  "calibration example " + std::to_string(i) + " has " +
                      std::to_string(example.positions.size()) + " positions, need " +
                      std::to_string(k));
    }
    double sum = 0.0;
    for (int pos = 0; pos < k; ++pos) {
      sum += distribution_confidence(example.positions[pos], temperature).value;
    }
    scored.push_back(ScoredExample{std::to_string(i), sum / static_cast<double>(k),
                                   example.label});
  }
  return scored;
}

}  // namespace

CalibrationResult calibrate_temperature(std::span<const CalibrationExample> train,
                                        const TemperatureGrid& grid, int k,
                                        ThresholdPolicy policy) {
  if (k < 1) {
    throw Error(ErrorKind::InvalidInput, "k must be >= 1");
  }
  bool has_jailbreak = false, has_benign = false;
  for (const CalibrationExample& example : train) {
    (example.label == Label::Jailbreak ? has_jailbreak : has_benign) = true;
  }
  if (!has_jailbreak || !has_benign) {
    throw Error(ErrorKind::DegenerateDataset, "calibration needs both labels in the train set");
  }

  CalibrationResult result;
  result.policy = policy;
  double best_auc = -1.0;
  double best_tau = 0.0;
  for (double tau : grid.points()) {
    const std::vector<ScoredExample> scored = score_at(train, tau, k);
    const double train_auc = auc(scored, Orientation::LowScoreIsJailbreak);
    result.auc_curve.emplace_back(tau, train_auc);
    // Strict improvement only: ties stay with the smaller tau.
    if (train_auc > best_auc) {
      best_auc = train_auc;
      best_tau = tau;
    }
  }
  result.best_tau = best_tau;
  result.best_train_auc = best_auc;

  const std::vector<ScoredExample> at_best = score_at(train, best_tau, k);
  result.threshold = select_threshold(at_best, policy, Orientation::LowScoreIsJailbreak);
  return result;
}

CalibrationResult calibrate_temperature(
    std::span<const std::pair<LogitVector, Label>> train, const TemperatureGrid& grid,
    ThresholdPolicy policy) {
  std::vector<CalibrationExample> examples;
  examples.reserve(train.size());
  for (const auto& [logits, label] : train) {
    CalibrationExample example;
    example.positions.push_back(TokenDistribution{logits});
    example.label = label;
    examples.push_back(std::move(example));
  }
  return calibrate_temperature(examples, grid, 1, policy);
}

std::string calibration_result_to_json(const CalibrationResult& result, int indent) {
  nlohmann::ordered_json j;
  j["best_tau"] = result.best_tau;
  j["best_train_auc"] = result.best_train_auc;
  j["threshold"] = result.threshold;
  j["threshold_policy"] = to_string(result.policy);
  nlohmann::ordered_json curve = nlohmann::ordered_json::array();
  for (const auto& [tau, value] : result.auc_curve) {
    curve.push_back(nlohmann::ordered_json{{"tau", tau}, {"auc", value}});
  }
  j["auc_curve"] = std::move(curve);
  return j.dump(indent);
}

std::string calibration_curve_csv(const CalibrationResult& result) {
  std::string csv = "tau,train_auc\n";
  char buf[64];
  for (const auto& [tau, value] : result.auc_curve) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", tau, value);
    csv += buf;
  }
  return csv;
}

}  // namespace fjd
