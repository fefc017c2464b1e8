#include "fjd/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fjd/errors.hpp"

namespace fjd {

namespace {

void check_logits(const LogitVector& logits) {
  if (logits.values.empty()) {
    throw Error(ErrorKind::InvalidInput, "logit vector is empty");
  }
  for (double v : logits.values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::InvalidInput, "logit vector contains a non-finite value");
    }
  }
}

}  // namespace

const char* to_string(Label label) {
  return label == Label::Jailbreak ? "jailbreak" : "benign";
}

Label label_from_string(std::string_view text) {
  if (text == "jailbreak") return Label::Jailbreak;
  if (text == "benign") return Label::Benign;
  throw Error(ErrorKind::SchemaError,
              "label must be \"jailbreak\" or \"benign\", got \"" + std::string(text) + "\"");
}

Temperature::Temperature(double tau) : tau_(tau) {
  if (!std::isfinite(tau) || tau <= 0.0) {
    throw Error(ErrorKind::InvalidTemperature,
                "temperature must be finite and > 0, got " + std::to_string(tau));
  }
}

std::size_t argmax_index(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<double> softmax_with_temperature(const LogitVector& logits,
                                             Temperature tau) {
  check_logits(logits);
  const double inv_tau = 1.0 / tau.value();

  std::vector<double> out(logits.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = logits.values[i] * inv_tau;
  }
  const double max_scaled = out[argmax_index(out)];

  double sum = 0.0;
  for (double& v : out) {
    v = std::exp(v - max_scaled);
    sum += v;
  }
  for (double& v : out) {
    v /= sum;
  }
  return out;
}

Confidence first_token_confidence(const LogitVector& logits, Temperature tau) {
  const std::vector<double> probs = softmax_with_temperature(logits, tau);
  return Confidence{probs[argmax_index(probs)]};
}

Confidence first_k_confidence(std::span<const LogitVector> distributions,
                              int k, Temperature tau) {
  if (k < 1) {
    throw Error(ErrorKind::InvalidInput, "k must be >= 1, got " + std::to_string(k));
  }
  if (distributions.size() < static_cast<std::size_t>(k)) {
    throw Error(ErrorKind::InsufficientTokens,
                "need " + std::to_string(k) + " scored positions, have " +
                    std::to_string(distributions.size()));
  }
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    sum += first_token_confidence(distributions[i], tau).value;
  }
  return Confidence{sum / static_cast<double>(k)};
}

DetectionVerdict detect(Confidence confidence, double threshold) {
  if (!std::isfinite(threshold) || threshold < 0.0 || threshold > 1.0) {
    throw Error(ErrorKind::InvalidThreshold,
                "threshold must lie in [0, 1], got " + std::to_string(threshold));
  }
  const Label label =
      confidence.value < threshold ? Label::Jailbreak : Label::Benign;
  return DetectionVerdict{label, confidence, threshold};
}

Confidence confidence_from_topk_logprobs(const TopKLogprobs& entries,
                                         Temperature tau) {
  if (entries.empty()) {
    throw Error(ErrorKind::InvalidInput, "top-k logprob map is empty");
  }

  double total_mass = 0.0;
  double max_logprob = -std::numeric_limits<double>::infinity();
  for (const auto& [token, lp] : entries) {
    if (!std::isfinite(lp) && lp != -std::numeric_limits<double>::infinity()) {
      throw Error(ErrorKind::InvalidInput, "logprob for token \"" + token + "\" is not finite");
    }
    if (lp > 0.0) {
      throw Error(ErrorKind::InconsistentLogprobs,
                  "positive logprob for token \"" + token + "\"");
    }
    total_mass += std::exp(lp);
    if (lp > max_logprob) max_logprob = lp;
  }
  if (total_mass > 1.0 + 1e-6) {
    throw Error(ErrorKind::InconsistentLogprobs,
                "top-k masses sum to " + std::to_string(total_mass) + " > 1");
  }

  if (tau.value() == 1.0) {
    return Confidence{std::exp(max_logprob)};
  }

  const double inv_tau = 1.0 / tau.value();
  double z = 0.0;
  for (const auto& [token, lp] : entries) {
    z += std::exp(lp * inv_tau);
  }
  // Tail mass below 1e-12 is floating-point residue of a complete map, not a
  // real unobserved remainder; folding it in would distort the 1/tau power.
  const double tail = 1.0 - total_mass;
  if (tail > 1e-12) {
    z += std::exp(std::log(tail) * inv_tau);
  }
  return Confidence{std::exp(max_logprob * inv_tau) / z};
}

}  // namespace fjd
