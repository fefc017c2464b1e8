#include "fjd/backend.hpp"

namespace fjd {

Confidence distribution_confidence(const TokenDistribution& distribution, Temperature tau) {
  if (distribution.is_full()) {
    return first_token_confidence(distribution.full(), tau);
  }
  return confidence_from_topk_logprobs(distribution.topk(), tau);
}

}  // namespace fjd
