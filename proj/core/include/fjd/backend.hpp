#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fjd/instruction.hpp"
#include "fjd/scoring.hpp"

namespace fjd {

// Per-position vocabulary distribution: either full logits or the top-k
// logprob map an API endpoint exposes.
struct TokenDistribution {
  std::variant<LogitVector, TopKLogprobs> data;

  bool is_full() const { return std::holds_alternative<LogitVector>(data); }
  const LogitVector& full() const { return std::get<LogitVector>(data); }
  const TopKLogprobs& topk() const { return std::get<TopKLogprobs>(data); }
};

// Temperature-scaled first-token confidence for either representation.
Confidence distribution_confidence(const TokenDistribution& distribution, Temperature tau);

struct BackendRequest {
  AssembledPrompt prompt;
  int max_positions = 1;
  // Free-form call context. The mock backend requires "id" and "label";
  // the replay backend falls back to "id" when content-hash lookup misses.
  std::map<std::string, std::string> metadata;
};

struct BackendResponse {
  std::vector<TokenDistribution> per_position;
  std::string backend_id;
  std::chrono::microseconds latency{0};
  // Set when fewer positions than requested were available.
  bool truncated = false;
};

// A source of per-position logits or logprobs. Implementations other than the
// HTTP client are pure functions of (inputs, seed, stored data) and safe to
// call concurrently.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual std::string id() const = 0;
  virtual BackendResponse score(const BackendRequest& request) = 0;

  // Teacher-forced conditional logprobs of the prompt tokens themselves,
  // for the perplexity baseline. nullopt = the backend cannot echo input
  // logprobs and PPL is unavailable rather than approximated.
  virtual std::optional<std::vector<double>> input_logprobs(const BackendRequest&) {
    return std::nullopt;
  }
};

}  // namespace fjd
