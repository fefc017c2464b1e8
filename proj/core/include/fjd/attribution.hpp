#pragma once

#include <filesystem>
#include <vector>

#include "fjd/instruction.hpp"
#include "fjd/toy_model.hpp"

namespace fjd {

// Saliency of every input position against the first K generated tokens:
// (m+q) rows (instruction tokens then query tokens) by K columns, entries
// nonnegative.
struct SaliencyMatrix {
  int instruction_len = 0;  // m
  int query_len = 0;        // q
  int horizon = 0;          // K
  std::vector<double> values;  // (m+q) x K, row-major

  double at(int input_pos, int output_pos) const {
    return values[std::size_t(input_pos) * horizon + output_pos];
  }
  double& at(int input_pos, int output_pos) {
    return values[std::size_t(input_pos) * horizon + output_pos];
  }
  int input_len() const { return instruction_len + query_len; }

  // True when some column carries no saliency mass at all (for instance a
  // model with zeroed projection weights); contribution ratios are undefined
  // there.
  bool degenerate() const;
};

struct AttributionResult {
  std::vector<double> pc;  // PC_k for k = 1..K
  int instruction_len = 0;
  int query_len = 0;
};

// Gradient-magnitude saliency on the toy model: SC[i][n] is the L2 norm over
// embedding dimensions of the central-finite-difference gradient of the n-th
// position's top-token logit with respect to input embedding row i. The
// greedy token path is fixed at the base point, so perturbations act through
// the logits only. Instruction and query spans are tokenized separately; the
// joining separator carries no attribution row.
SaliencyMatrix saliency(const ToyModel& model, const AssembledPrompt& prompt, int horizon,
                        double fd_step = 1e-4);

// Length-penalized instruction contribution over the first k columns:
// mean over columns of (instruction mass / total mass), scaled once by
// sqrt((m+q)/m). Requires m >= 1 and positive column sums.
double prompt_contribution(const SaliencyMatrix& sc, int k);

// PC_k for every k up to the matrix horizon.
AttributionResult attribution_over_horizon(const SaliencyMatrix& sc);

// Text exchange format so externally computed saliency can flow through
// prompt_contribution: header line "m q K", then m+q rows of K values.
void save_saliency(const std::filesystem::path& path, const SaliencyMatrix& sc);
SaliencyMatrix load_saliency(const std::filesystem::path& path);

}  // namespace fjd
