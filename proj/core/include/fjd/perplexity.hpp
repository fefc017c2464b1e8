#pragma once

#include <span>

#include "fjd/metrics.hpp"

namespace fjd {

struct PerplexityScore {
  double value = 1.0;
  int token_count = 0;
};

// exp of the negative mean token logprob. Logprobs must be finite and <= 0,
// so the score is always >= 1.
PerplexityScore perplexity(std::span<const double> token_logprobs);

// High perplexity flags jailbreaks by default. Reports also carry the
// reversed-orientation AUC so low-perplexity attack regimes stay visible.
inline Orientation ppl_detector_orientation() {
  return Orientation::HighScoreIsJailbreak;
}

}  // namespace fjd
