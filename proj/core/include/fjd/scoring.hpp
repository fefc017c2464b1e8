#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fjd {

enum class Label { Jailbreak, Benign };

const char* to_string(Label label);
Label label_from_string(std::string_view text);

// Unnormalized log-scores over a vocabulary at one generation position.
struct LogitVector {
  std::vector<double> values;

  std::size_t vocab_size() const { return values.size(); }
};

// Softmax scaling temperature. Strictly positive and finite by construction;
// a grid that nominally starts at 0 must start at the first positive point.
class Temperature {
 public:
  explicit Temperature(double tau);

  double value() const { return tau_; }

 private:
  double tau_;
};

// Maximum probability over the vocabulary; the detection statistic.
struct Confidence {
  double value = 0.0;
};

struct DetectionVerdict {
  Label label;
  Confidence confidence;
  double threshold = 0.0;
};

// Top-k logprob entries keyed by token text. An ordered map keeps tie
// handling and serialization deterministic.
using TopKLogprobs = std::map<std::string, double>;

// Index of the largest value; ties resolve to the lowest index. Applied both
// before and after scaling so argmax invariance is observable.
std::size_t argmax_index(std::span<const double> values);

// softmax(logits / tau), computed in log space with max subtraction so that
// logits of magnitude ~1e4 do not overflow. Output sums to 1 within 1e-9 and
// preserves the input argmax for every tau.
std::vector<double> softmax_with_temperature(const LogitVector& logits,
                                             Temperature tau);

// Max entry of softmax_with_temperature(logits, tau).
Confidence first_token_confidence(const LogitVector& logits, Temperature tau);

// Arithmetic mean of the per-position first-token confidences over positions
// 1..k. k=1 reduces bit-for-bit to first_token_confidence.
Confidence first_k_confidence(std::span<const LogitVector> distributions,
                              int k, Temperature tau);

// Jailbreak iff confidence < threshold (strict); equality is benign.
DetectionVerdict detect(Confidence confidence, double threshold);

// Confidence from a top-k logprob map. Exact at tau=1. At other temperatures
// the unobserved tail mass (1 - sum of entry masses, when positive) is folded
// in as a single pseudo token and everything is renormalized after the
// 1/tau power; this is a documented approximation of full-vocabulary scaling.
Confidence confidence_from_topk_logprobs(const TopKLogprobs& entries,
                                         Temperature tau);

}  // namespace fjd
