#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "fjd/backend.hpp"

namespace fjd {

struct EmbeddingMatrix;  // virtual_instruction.hpp

// Input element: a vocabulary token id or a raw embedding row (the form a
// learned virtual instruction takes).
using ToyItem = std::variant<int, std::vector<double>>;

struct ToyModelConfig {
  // 0 means "alphabet size", the only vocab that can tokenize text. Forward
  // passes on raw token ids work with any size >= 2.
  int vocab_size = 0;
  int embed_dim = 8;
  int hidden_dim = 16;
  std::uint64_t seed = 42;
  // Greedy scoring horizon; requests beyond it are invalid-horizon.
  int max_positions = 16;
  // Output gain on the logit projection. The default keeps logits near unit
  // variance; larger values let the model reach high-confidence regimes.
  double logit_scale = 1.0;
  // Degenerate configuration for attribution tests: all projection weights 0.
  bool zero_projection = false;
};

// Desk-scale stand-in for an LLM: seeded token embeddings, mean pooling over
// the input, and a fixed two-layer tanh map to vocabulary logits. Mean
// pooling is the smallest architecture where a prepended instruction changes
// the first-token distribution of every query. Deterministic per seed,
// logits finite for any finite input, and differentiable in embedding rows
// via finite differences.
class ToyModel {
 public:
  explicit ToyModel(ToyModelConfig config);

  int vocab_size() const { return config_.vocab_size; }
  int embed_dim() const { return config_.embed_dim; }
  int horizon() const { return config_.max_positions; }
  std::uint64_t seed() const { return config_.seed; }

  // Character-level tokenizer over a fixed lowercase alphabet; uppercase is
  // folded, anything outside the alphabet is an invalid-token error.
  // Requires vocab_size == alphabet_size().
  std::vector<int> tokenize(std::string_view text) const;

  std::span<const double> embedding_row(int token) const;

  // Logits over the vocabulary for one position given the whole input.
  LogitVector forward(std::span<const ToyItem> items) const;

  // FNV over the config and seeded parameters; persisted embeddings carry it
  // so a matrix cannot silently be applied to a different model.
  std::uint64_t fingerprint() const { return fingerprint_; }

  static int alphabet_size();
  static std::string_view alphabet();

 private:
  ToyModelConfig config_;
  std::vector<double> token_embeddings_;  // vocab x embed, row-major
  std::vector<double> w1_;                // hidden x embed
  std::vector<double> b1_;                // hidden
  std::vector<double> w2_;                // vocab x hidden
  std::vector<double> b2_;                // vocab
  std::uint64_t fingerprint_ = 0;
};

// Greedy per-position logits: position 1 is forward(input); each further
// position appends the previous argmax token and reruns. Length k <= horizon.
std::vector<LogitVector> toy_rollout(const ToyModel& model, std::span<const ToyItem> items,
                                     int k);

// Teacher-forced conditional logprob of each token given its prefix, natural
// log, softmax at tau = 1. The first token conditions on the empty prefix.
std::vector<double> toy_input_logprobs(const ToyModel& model, std::span<const int> tokens);

std::vector<ToyItem> items_from_tokens(std::span<const int> tokens);

// Backend adapter. With a virtual instruction set, the assembled query span
// is tokenized and the matrix rows are prepended in embedding space; the
// instruction text in the prompt is ignored (detection pipelines pass the
// none instruction alongside a learned matrix).
class ToyBackend : public Backend {
 public:
  explicit ToyBackend(std::shared_ptr<const ToyModel> model);
  ToyBackend(std::shared_ptr<const ToyModel> model, EmbeddingMatrix virtual_instruction);
  ~ToyBackend() override;

  std::string id() const override;
  BackendResponse score(const BackendRequest& request) override;
  std::optional<std::vector<double>> input_logprobs(const BackendRequest& request) override;

  const ToyModel& model() const { return *model_; }

 private:
  std::shared_ptr<const ToyModel> model_;
  std::unique_ptr<EmbeddingMatrix> virtual_instruction_;
};

}  // namespace fjd
