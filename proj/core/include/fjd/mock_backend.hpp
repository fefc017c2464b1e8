#pragma once

#include <cstdint>

#include "fjd/backend.hpp"

namespace fjd {

// Synthetic logit generator encoding the planted detection signal: benign
// prompts get sharper first-token distributions than jailbreak prompts, a
// non-empty instruction widens the gap on benign prompts only, and jailbreak
// tail logits are distributed more evenly so temperature scaling above 1
// deflates them faster. Everything is a pure function of (seed, prompt id,
// position, profile).
struct MockProfile {
  // Mean of the max-logit draw per label. The usual configuration keeps
  // benign above jailbreak; equal values make a no-signal corpus.
  double benign_sharpness = 6.0;
  double jailbreak_sharpness = 3.0;
  // Added to the benign max-logit mean when the prompt carries an instruction.
  double instruction_boost = 0.0;
  std::uint64_t seed = 0;

  int vocab_size = 32;
  double margin_noise_sd = 1.0;
  // Spread of the non-max logits. A small jailbreak spread means an even
  // tail, the regime where scaling with tau > 1 bites hardest.
  double benign_tail_spread = 2.0;
  double jailbreak_tail_spread = 0.25;

  // Synthesized input logprobs for the perplexity baseline.
  int input_token_count = 16;
  double benign_input_logprob_mean = -1.5;
  double jailbreak_input_logprob_mean = -2.5;
  double input_logprob_sd = 0.3;
};

class MockBackend : public Backend {
 public:
  explicit MockBackend(MockProfile profile);

  std::string id() const override;
  BackendResponse score(const BackendRequest& request) override;
  std::optional<std::vector<double>> input_logprobs(const BackendRequest& request) override;

  const MockProfile& profile() const { return profile_; }

 private:
  MockProfile profile_;
};

}  // namespace fjd
