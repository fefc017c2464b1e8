#include "fjd/attribution.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fjd/errors.hpp"

namespace fjd {

bool SaliencyMatrix::degenerate() const {
  for (int n = 0; n < horizon; ++n) {
    double column_sum = 0.0;
    for (int i = 0; i < input_len(); ++i) column_sum += at(i, n);
    if (column_sum <= 0.0) return true;
  }
  return false;
}

SaliencyMatrix saliency(const ToyModel& model, const AssembledPrompt& prompt, int horizon,
                        double fd_step) {
  if (horizon < 1) {
    throw Error(ErrorKind::InvalidInput, "horizon must be >= 1");
  }
  if (horizon > model.horizon()) {
    throw Error(ErrorKind::InvalidHorizon,
                "horizon " + std::to_string(horizon) + " exceeds the model horizon " +
                    std::to_string(model.horizon()));
  }

  const std::vector<int> instruction_tokens =
      model.tokenize(prompt.instruction_text());
  const std::vector<int> query_tokens = model.tokenize(prompt.query_text());
  if (query_tokens.empty()) {
    throw Error(ErrorKind::InvalidInput, "query span tokenizes to nothing");
  }

  const int m = static_cast<int>(instruction_tokens.size());
  const int q = static_cast<int>(query_tokens.size());
  const int d = model.embed_dim();

  // Base input: instruction tokens then query tokens, as embedding rows so
  // individual coordinates can be perturbed.
  std::vector<ToyItem> base;
  base.reserve(m + q);
  const auto push_rows = [&](const std::vector<int>& tokens) {
    for (int token : tokens) {
      const auto row = model.embedding_row(token);
      base.emplace_back(std::vector<double>(row.begin(), row.end()));
    }
  };
  push_rows(instruction_tokens);
  push_rows(query_tokens);

  // Fix the greedy token path at the base point.
  const std::vector<LogitVector> base_rollout = toy_rollout(model, base, horizon);
  std::vector<int> top_tokens(horizon);
  for (int n = 0; n < horizon; ++n) {
    top_tokens[n] = static_cast<int>(argmax_index(base_rollout[n].values));
  }

  // Logit of the fixed top token at each position for a perturbed input; the
  // generated continuation uses the fixed path, not a re-decoded one.
  const auto rollout_logits = [&](const std::vector<ToyItem>& input,
                                  std::vector<double>& out) {
    std::vector<ToyItem> sequence = input;
    for (int n = 0; n < horizon; ++n) {
      const LogitVector logits = model.forward(sequence);
      out[n] = logits.values[top_tokens[n]];
      if (n + 1 < horizon) sequence.emplace_back(top_tokens[n]);
    }
  };

  SaliencyMatrix sc;
  sc.instruction_len = m;
  sc.query_len = q;
  sc.horizon = horizon;
  sc.values.assign(std::size_t(m + q) * horizon, 0.0);

  std::vector<double> up(horizon), down(horizon);
  std::vector<ToyItem> perturbed = base;
  for (int i = 0; i < m + q; ++i) {
    std::vector<double>& row = std::get<std::vector<double>>(perturbed[i]);
    for (int c = 0; c < d; ++c) {
      const double saved = row[c];
      row[c] = saved + fd_step;
      rollout_logits(perturbed, up);
      row[c] = saved - fd_step;
      rollout_logits(perturbed, down);
      row[c] = saved;
      for (int n = 0; n < horizon; ++n) {
        const double g = (up[n] - down[n]) / (2.0 * fd_step);
        sc.at(i, n) += g * g;
      }
    }
    for (int n = 0; n < horizon; ++n) {
      sc.at(i, n) = std::sqrt(sc.at(i, n));
    }
  }
  return sc;
}

double prompt_contribution(const SaliencyMatrix& sc, int k) {
  if (sc.instruction_len < 1) {
    throw Error(ErrorKind::InvalidInput, "prompt contribution needs at least one instruction row");
  }
  if (k < 1 || k > sc.horizon) {
    throw Error(ErrorKind::InvalidInput,
                "k must lie in [1, " + std::to_string(sc.horizon) + "]");
  }

  const int m = sc.instruction_len;
  const int total = sc.input_len();
  double ratio_sum = 0.0;
  for (int n = 0; n < k; ++n) {
    double instruction_mass = 0.0;
    double column_mass = 0.0;
    for (int i = 0; i < total; ++i) {
      const double v = sc.at(i, n);
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw Error(ErrorKind::InvalidInput, "saliency entries must be finite and >= 0");
      }
      column_mass += v;
      if (i < m) instruction_mass += v;
    }
    if (column_mass <= 0.0) {
      throw Error(ErrorKind::DegenerateSaliency,
                  "saliency column " + std::to_string(n + 1) + " has zero mass");
    }
    ratio_sum += instruction_mass / column_mass;
  }
  const double penalty = std::sqrt(static_cast<double>(total) / static_cast<double>(m));
  return ratio_sum / static_cast<double>(k) * penalty;
}

AttributionResult attribution_over_horizon(const SaliencyMatrix& sc) {
  AttributionResult result;
  result.instruction_len = sc.instruction_len;
  result.query_len = sc.query_len;
  result.pc.reserve(sc.horizon);
  for (int k = 1; k <= sc.horizon; ++k) {
    result.pc.push_back(prompt_contribution(sc, k));
  }
  return result;
}

void save_saliency(const std::filesystem::path& path, const SaliencyMatrix& sc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error(ErrorKind::IoError, "cannot write saliency file " + path.string());
  }
  out << sc.instruction_len << ' ' << sc.query_len << ' ' << sc.horizon << '\n';
  char buf[40];
  for (int i = 0; i < sc.input_len(); ++i) {
    for (int n = 0; n < sc.horizon; ++n) {
      std::snprintf(buf, sizeof(buf), "%.17g", sc.at(i, n));
      out << buf << (n + 1 == sc.horizon ? '\n' : ' ');
    }
  }
}

SaliencyMatrix load_saliency(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::IoError, "cannot open saliency file " + path.string());
  }
  SaliencyMatrix sc;
  if (!(in >> sc.instruction_len >> sc.query_len >> sc.horizon)) {
    throw Error(ErrorKind::ParseError, "bad saliency header in " + path.string());
  }
  if (sc.instruction_len < 0 || sc.query_len < 0 || sc.horizon < 1 ||
      sc.input_len() < 1) {
    throw Error(ErrorKind::ParseError, "implausible saliency header in " + path.string());
  }
  sc.values.resize(std::size_t(sc.input_len()) * sc.horizon);
  for (double& v : sc.values) {
    if (!(in >> v)) {
      throw Error(ErrorKind::ParseError, "truncated saliency matrix in " + path.string());
    }
    if (!std::isfinite(v) || v < 0.0) {
      throw Error(ErrorKind::ParseError, "saliency entries must be finite and >= 0");
    }
  }
  return sc;
}

}  // namespace fjd
