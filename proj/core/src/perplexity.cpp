#include "fjd/perplexity.hpp"

#include <cmath>

#include "fjd/errors.hpp"

namespace fjd {

PerplexityScore perplexity(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) {
    throw Error(ErrorKind::InvalidInput, "perplexity over an empty logprob list");
  }
  double sum = 0.0;
  for (double lp : token_logprobs) {
    if (!std::isfinite(lp)) {
      throw Error(ErrorKind::InvalidInput, "non-finite token logprob");
    }
    if (lp > 0.0) {
      throw Error(ErrorKind::InconsistentLogprobs,
                  "positive token logprob " + std::to_string(lp));
    }
    sum += lp;
  }
  const double n = static_cast<double>(token_logprobs.size());
  PerplexityScore score;
  score.value = std::exp(-sum / n);
  score.token_count = static_cast<int>(token_logprobs.size());
  return score;
}

}  // namespace fjd
