#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fjd/backend.hpp"
#include "fjd/metrics.hpp"

namespace fjd {

// Inclusive tau sweep. The default is the 0.01-step sweep of (0, 2]; the
// sweep starts at the first positive point because softmax is undefined at 0.
struct TemperatureGrid {
  double start = 0.01;
  double stop = 2.0;
  double step = 0.01;

  // Grid values snapped to 1e-9 so decimal grids carry exact points (the
  // default grid contains exactly 1.0).
  std::vector<double> points() const;

  static TemperatureGrid single(double tau) { return TemperatureGrid{tau, tau, 1.0}; }
};

struct CalibrationResult {
  double best_tau = 1.0;
  double best_train_auc = 0.0;
  std::vector<std::pair<double, double>> auc_curve;  // (tau, train auc)
  double threshold = 0.5;
  ThresholdPolicy policy;
};

// One example the sweep can re-score at any temperature: the cached
// per-position distributions plus the label. Logits are tau-independent, so
// one backend pass funds the entire sweep.
struct CalibrationExample {
  std::vector<TokenDistribution> positions;
  Label label = Label::Benign;
};

// Grid search for the temperature maximizing train AUC (benign positive,
// low confidence means jailbreak), ties broken toward the smallest tau, full
// curve retained. The detection threshold is then selected at the winning
// temperature under the given policy.
CalibrationResult calibrate_temperature(std::span<const CalibrationExample> train,
                                        const TemperatureGrid& grid, int k = 1,
                                        ThresholdPolicy policy = ThresholdPolicy::max_f1());

// Single-position convenience overload matching the raw (logits, label) form.
CalibrationResult calibrate_temperature(
    std::span<const std::pair<LogitVector, Label>> train, const TemperatureGrid& grid,
    ThresholdPolicy policy = ThresholdPolicy::max_f1());

std::string calibration_result_to_json(const CalibrationResult& result, int indent = 2);
std::string calibration_curve_csv(const CalibrationResult& result);

}  // namespace fjd
