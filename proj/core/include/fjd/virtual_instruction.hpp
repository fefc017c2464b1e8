#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fjd/instruction.hpp"
#include "fjd/scoring.hpp"
#include "fjd/toy_model.hpp"

namespace fjd {

// Learnable virtual-instruction rows, row-major m x d.
struct EmbeddingMatrix {
  int rows = 0;
  int dim = 0;
  std::vector<double> values;

  static EmbeddingMatrix zeros(int rows, int dim);

  std::span<const double> row(int r) const {
    return std::span<const double>(values).subspan(std::size_t(r) * dim, dim);
  }
  std::span<double> row(int r) {
    return std::span<double>(values).subspan(std::size_t(r) * dim, dim);
  }
};

enum class TargetKind { OneHotAtBaseArgmax, Uniform };

struct TargetDistribution {
  TargetKind kind = TargetKind::Uniform;
  int size = 0;
  int hot_index = -1;  // only for OneHotAtBaseArgmax
};

struct LiLoss {
  double value = 0.0;
  // Set when the log was floored (probability underflow at the hot index).
  bool floored = false;
};

// Logprobs inside the loss are floored here so the objective stays finite
// when the model saturates.
inline constexpr double kLiLogFloor = -50.0;

// -log p[hot_index], the finite surrogate for a KL against a one-hot target;
// zero exactly when p is one-hot at hot_index. Sets *floored when the log hit
// the floor.
double cross_entropy_to_onehot(std::span<const double> probs, int hot_index,
                               bool* floored = nullptr);

// KL(p || uniform) = log l - H(p); zero exactly at the uniform distribution,
// log l at a one-hot.
double kl_to_uniform(std::span<const double> probs);

// The instruction-learning objective on one example. Benign: cross-entropy
// against the one-hot at the bare query's argmax. Jailbreak: KL to uniform.
// Both are nonnegative and zero exactly at their target distribution.
LiLoss li_loss(const ToyModel& model, const EmbeddingMatrix& virtual_instruction,
               std::span<const int> query_tokens, Label label);

struct LiExample {
  std::vector<int> query_tokens;
  Label label = Label::Benign;
};

// Unweighted mean of li_loss over a mixed batch.
double mean_li_loss(const ToyModel& model, const EmbeddingMatrix& virtual_instruction,
                    std::span<const LiExample> examples);

enum class OptimizerKind { FiniteDifferenceGd, RandomSearch };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::FiniteDifferenceGd;
  double learning_rate = 0.5;
  double fd_step = 1e-4;
  // Random search proposal scale and its per-rejection decay.
  double search_step = 0.5;
  double search_decay = 0.98;
  std::uint64_t seed = 0;
};

struct TracePoint {
  int evaluations = 0;   // budget consumed so far
  double loss = 0.0;      // loss of the candidate just evaluated
  double best_loss = 0.0; // best accepted loss so far; non-increasing
};

struct OptimizationResult {
  EmbeddingMatrix embeddings;
  std::vector<TracePoint> trace;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Optimizes the virtual instruction against the mean train loss with at most
// `budget` mean-loss evaluations beyond the initial one. Only improvements
// are accepted, so the result never scores worse than the init; budget 0
// returns the init unchanged.
OptimizationResult optimize_instruction(const ToyModel& model,
                                        std::span<const LiExample> train,
                                        const EmbeddingMatrix& init, int budget,
                                        const OptimizerConfig& config);

// Warm start: the instruction's token embeddings. The none instruction gives
// an m=0 matrix, whose loss equals the bare-query loss.
EmbeddingMatrix init_from_text(const Instruction& instruction, const ToyModel& model);

// Portable file: magic, version, m, d, seed, model fingerprint, then
// row-major IEEE-754 doubles, everything little-endian.
void save_embedding(const std::filesystem::path& path, const EmbeddingMatrix& matrix,
                    std::uint64_t seed, std::uint64_t model_fingerprint);

struct LoadedEmbedding {
  EmbeddingMatrix matrix;
  std::uint64_t seed = 0;
  std::uint64_t model_fingerprint = 0;
};

LoadedEmbedding load_embedding(const std::filesystem::path& path);

}  // namespace fjd
