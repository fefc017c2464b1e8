#include "fjd/virtual_instruction.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "fjd/errors.hpp"
#include "fjd/rng.hpp"

namespace fjd {

namespace {

std::vector<ToyItem> items_with_virtual(const EmbeddingMatrix& virtual_instruction,
                                        std::span<const int> query_tokens) {
  std::vector<ToyItem> items;
  items.reserve(virtual_instruction.rows + query_tokens.size());
  for (int r = 0; r < virtual_instruction.rows; ++r) {
    const auto row = virtual_instruction.row(r);
    items.emplace_back(std::vector<double>(row.begin(), row.end()));
  }
  for (int token : query_tokens) items.emplace_back(token);
  return items;
}

}  // namespace

double cross_entropy_to_onehot(std::span<const double> probs, int hot_index, bool* floored) {
  if (hot_index < 0 || hot_index >= static_cast<int>(probs.size())) {
    throw Error(ErrorKind::InvalidInput, "hot index out of range");
  }
  double lp = std::log(probs[hot_index]);
  if (lp < kLiLogFloor || !std::isfinite(lp)) {
    lp = kLiLogFloor;
    if (floored) *floored = true;
  }
  return -lp;
}

double kl_to_uniform(std::span<const double> probs) {
  if (probs.empty()) {
    throw Error(ErrorKind::InvalidInput, "empty distribution");
  }
  // log l - H(p); the p log p terms vanish as p -> 0.
  double neg_entropy = 0.0;
  for (double p : probs) {
    if (p > 0.0) neg_entropy += p * std::log(p);
  }
  return std::max(0.0, std::log(double(probs.size())) + neg_entropy);
}

EmbeddingMatrix EmbeddingMatrix::zeros(int rows, int dim) {
  EmbeddingMatrix m;
  m.rows = rows;
  m.dim = dim;
  m.values.assign(std::size_t(rows) * dim, 0.0);
  return m;
}

LiLoss li_loss(const ToyModel& model, const EmbeddingMatrix& virtual_instruction,
               std::span<const int> query_tokens, Label label) {
  if (query_tokens.empty()) {
    throw Error(ErrorKind::InvalidInput, "query token sequence is empty");
  }
  if (virtual_instruction.rows > 0 && virtual_instruction.dim != model.embed_dim()) {
    throw Error(ErrorKind::InvalidInput, "virtual instruction dimension mismatch");
  }

  const std::vector<ToyItem> items = items_with_virtual(virtual_instruction, query_tokens);
  const LogitVector logits = model.forward(items);
  const std::vector<double> p = softmax_with_temperature(logits, Temperature(1.0));

  LiLoss loss;
  if (label == Label::Benign) {
    // Target: one-hot at the argmax of the bare query's first-token
    // distribution, prepended instruction excluded.
    const std::vector<ToyItem> bare = items_from_tokens(query_tokens);
    const LogitVector bare_logits = model.forward(bare);
    const std::size_t hot = argmax_index(bare_logits.values);
    loss.value = cross_entropy_to_onehot(p, static_cast<int>(hot), &loss.floored);
  } else {
    loss.value = kl_to_uniform(p);
  }
  return loss;
}

double mean_li_loss(const ToyModel& model, const EmbeddingMatrix& virtual_instruction,
                    std::span<const LiExample> examples) {
  if (examples.empty()) {
    throw Error(ErrorKind::InvalidInput, "loss over an empty example set");
  }
  double sum = 0.0;
  for (const LiExample& example : examples) {
    sum += li_loss(model, virtual_instruction, example.query_tokens, example.label).value;
  }
  return sum / static_cast<double>(examples.size());
}

namespace {

struct BudgetedLoss {
  const ToyModel& model;
  std::span<const LiExample> train;
  int budget;
  int used = 0;
  std::vector<TracePoint>* trace = nullptr;
  double best = 0.0;

  bool exhausted() const { return used >= budget; }

  double eval(const EmbeddingMatrix& candidate) {
    ++used;
    const double loss = mean_li_loss(model, candidate, train);
    if (loss < best) best = loss;
    trace->push_back(TracePoint{used, loss, best});
    return loss;
  }
};

void run_fd_gradient_descent(BudgetedLoss& loss_fn, EmbeddingMatrix& best,
                             double& best_loss, const OptimizerConfig& config) {
  EmbeddingMatrix theta = best;
  const std::size_t n = theta.values.size();
  const double h = config.fd_step;

  while (true) {
    // One iteration: 2n central-difference evals plus the candidate eval.
    if (loss_fn.used + static_cast<int>(2 * n) + 1 > loss_fn.budget) return;

    std::vector<double> grad(n);
    for (std::size_t i = 0; i < n; ++i) {
      EmbeddingMatrix probe = theta;
      probe.values[i] += h;
      const double up = loss_fn.eval(probe);
      probe.values[i] = theta.values[i] - h;
      const double down = loss_fn.eval(probe);
      grad[i] = (up - down) / (2.0 * h);
    }

    EmbeddingMatrix candidate = theta;
    for (std::size_t i = 0; i < n; ++i) {
      candidate.values[i] -= config.learning_rate * grad[i];
    }
    const double candidate_loss = loss_fn.eval(candidate);
    if (candidate_loss < best_loss) {
      best = candidate;
      best_loss = candidate_loss;
    }
    // The walk continues from the new iterate even on a non-improving step;
    // the returned matrix is the best accepted one.
    theta = std::move(candidate);
  }
}

void run_random_search(BudgetedLoss& loss_fn, EmbeddingMatrix& best, double& best_loss,
                       const OptimizerConfig& config) {
  rng::Engine eng = rng::seeded(config.seed, 0x6c69ULL);
  double step = config.search_step;
  const std::size_t n = best.values.size();

  while (!loss_fn.exhausted()) {
    EmbeddingMatrix candidate = best;
    // Perturb one coordinate or, every fourth proposal, the whole matrix.
    if (n > 1 && rng::next_below(eng, 4) != 0) {
      const std::size_t i = rng::next_below(eng, n);
      candidate.values[i] += rng::next_gaussian(eng) * step;
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        candidate.values[i] += rng::next_gaussian(eng) * step;
      }
    }
    const double loss = loss_fn.eval(candidate);
    if (loss < best_loss) {
      best = std::move(candidate);
      best_loss = loss;
    } else {
      step *= config.search_decay;
      if (step < 1e-6) step = config.search_step;
    }
  }
}

}  // namespace

OptimizationResult optimize_instruction(const ToyModel& model,
                                        std::span<const LiExample> train,
                                        const EmbeddingMatrix& init, int budget,
                                        const OptimizerConfig& config) {
  if (budget < 0) {
    throw Error(ErrorKind::InvalidBudget, "budget must be >= 0");
  }
  if (train.empty()) {
    throw Error(ErrorKind::DegenerateDataset, "empty training set");
  }

  OptimizationResult result;
  result.initial_loss = mean_li_loss(model, init, train);
  result.embeddings = init;
  result.final_loss = result.initial_loss;
  if (budget == 0 || init.values.empty()) {
    return result;
  }

  BudgetedLoss loss_fn{model, train, budget};
  loss_fn.trace = &result.trace;
  loss_fn.best = result.initial_loss;

  double best_loss = result.initial_loss;
  if (config.kind == OptimizerKind::FiniteDifferenceGd) {
    run_fd_gradient_descent(loss_fn, result.embeddings, best_loss, config);
  } else {
    run_random_search(loss_fn, result.embeddings, best_loss, config);
  }
  result.final_loss = best_loss;
  return result;
}

EmbeddingMatrix init_from_text(const Instruction& instruction, const ToyModel& model) {
  const std::vector<int> tokens = model.tokenize(instruction.text);
  EmbeddingMatrix matrix;
  matrix.rows = static_cast<int>(tokens.size());
  matrix.dim = model.embed_dim();
  matrix.values.reserve(tokens.size() * model.embed_dim());
  for (int token : tokens) {
    const auto row = model.embedding_row(token);
    matrix.values.insert(matrix.values.end(), row.begin(), row.end());
  }
  return matrix;
}

namespace {

constexpr char kMagic[8] = {'F', 'J', 'D', 'E', 'M', 'B', '0', '1'};

static_assert(std::numeric_limits<double>::is_iec559, "IEEE-754 doubles required");

void put_u64_le(std::ofstream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64_le(std::ifstream& in, const std::string& path) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
    throw Error(ErrorKind::ParseError, "truncated embedding file " + path);
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void save_embedding(const std::filesystem::path& path, const EmbeddingMatrix& matrix,
                    std::uint64_t seed, std::uint64_t model_fingerprint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorKind::IoError, "cannot write embedding file " + path.string());
  }
  out.write(kMagic, sizeof(kMagic));
  put_u64_le(out, static_cast<std::uint64_t>(matrix.rows));
  put_u64_le(out, static_cast<std::uint64_t>(matrix.dim));
  put_u64_le(out, seed);
  put_u64_le(out, model_fingerprint);
  for (double v : matrix.values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64_le(out, bits);
  }
  if (!out) {
    throw Error(ErrorKind::IoError, "short write on embedding file " + path.string());
  }
}

LoadedEmbedding load_embedding(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::IoError, "cannot open embedding file " + path.string());
  }
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::ParseError, "not an embedding file: " + path.string());
  }
  LoadedEmbedding loaded;
  const std::uint64_t rows = get_u64_le(in, path.string());
  const std::uint64_t dim = get_u64_le(in, path.string());
  if (rows > 1'000'000 || dim == 0 || dim > 1'000'000) {
    throw Error(ErrorKind::ParseError, "implausible embedding dimensions in " + path.string());
  }
  loaded.seed = get_u64_le(in, path.string());
  loaded.model_fingerprint = get_u64_le(in, path.string());
  loaded.matrix.rows = static_cast<int>(rows);
  loaded.matrix.dim = static_cast<int>(dim);
  loaded.matrix.values.resize(rows * dim);
  for (double& v : loaded.matrix.values) {
    const std::uint64_t bits = get_u64_le(in, path.string());
    std::memcpy(&v, &bits, sizeof(v));
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::ParseError, "non-finite value in embedding file " + path.string());
    }
  }
  return loaded;
}

}  // namespace fjd
