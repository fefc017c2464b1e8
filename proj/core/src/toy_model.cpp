#include "fjd/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fjd/errors.hpp"
#include "fjd/rng.hpp"
#include "fjd/virtual_instruction.hpp"

namespace fjd {

namespace {

constexpr std::string_view kAlphabet =
    "abcdefghijklmnopqrstuvwxyz0123456789 .,!?'-:;\"()";

std::uint64_t mix_doubles(std::uint64_t h, std::span<const double> values) {
  for (double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    h = rng::splitmix64(h ^ bits);
  }
  return h;
}

}  // namespace

int ToyModel::alphabet_size() { return static_cast<int>(kAlphabet.size()); }
std::string_view ToyModel::alphabet() { return kAlphabet; }

ToyModel::ToyModel(ToyModelConfig config) : config_(config) {
  if (config_.vocab_size == 0) config_.vocab_size = alphabet_size();
  if (config_.vocab_size < 2) {
    throw Error(ErrorKind::InvalidInput, "toy vocab size must be >= 2");
  }
  if (config_.embed_dim < 1 || config_.hidden_dim < 1 || config_.max_positions < 1) {
    throw Error(ErrorKind::InvalidInput, "toy model dimensions must be positive");
  }

  const int l = config_.vocab_size;
  const int d = config_.embed_dim;
  const int h = config_.hidden_dim;

  rng::Engine eng = rng::seeded(config_.seed, 0x746f79ULL);
  const auto fill_gaussian = [&](std::vector<double>& out, std::size_t n, double scale) {
    out.resize(n);
    for (double& v : out) v = rng::next_gaussian(eng) * scale;
  };

  if (!(config_.logit_scale > 0.0) || !std::isfinite(config_.logit_scale)) {
    throw Error(ErrorKind::InvalidInput, "logit scale must be finite and > 0");
  }
  fill_gaussian(token_embeddings_, std::size_t(l) * d, 1.0);
  fill_gaussian(w1_, std::size_t(h) * d, 1.0 / std::sqrt(double(d)));
  fill_gaussian(b1_, h, 0.1);
  fill_gaussian(w2_, std::size_t(l) * h, config_.logit_scale / std::sqrt(double(h)));
  fill_gaussian(b2_, l, 0.1);
  if (config_.zero_projection) {
    std::fill(w1_.begin(), w1_.end(), 0.0);
    std::fill(b1_.begin(), b1_.end(), 0.0);
    std::fill(w2_.begin(), w2_.end(), 0.0);
    std::fill(b2_.begin(), b2_.end(), 0.0);
  }

  std::uint64_t fp = rng::splitmix64(config_.seed);
  fp = rng::splitmix64(fp ^ std::uint64_t(l));
  fp = rng::splitmix64(fp ^ std::uint64_t(d));
  fp = rng::splitmix64(fp ^ std::uint64_t(h));
  fp = mix_doubles(fp, token_embeddings_);
  fp = mix_doubles(fp, w2_);
  fingerprint_ = fp;
}

std::vector<int> ToyModel::tokenize(std::string_view text) const {
  if (config_.vocab_size != alphabet_size()) {
    throw Error(ErrorKind::InvalidInput,
                "text tokenization needs vocab_size == alphabet size (" +
                    std::to_string(alphabet_size()) + ")");
  }
  std::vector<int> tokens;
  tokens.reserve(text.size());
  for (char raw : text) {
    char c = raw;
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    const std::size_t idx = kAlphabet.find(c);
    if (idx == std::string_view::npos) {
      throw Error(ErrorKind::InvalidToken,
                  std::string("character \"") + raw + "\" is outside the toy vocabulary");
    }
    tokens.push_back(static_cast<int>(idx));
  }
  return tokens;
}

std::span<const double> ToyModel::embedding_row(int token) const {
  if (token < 0 || token >= config_.vocab_size) {
    throw Error(ErrorKind::InvalidToken, "token id " + std::to_string(token) + " out of range");
  }
  return std::span<const double>(token_embeddings_)
      .subspan(std::size_t(token) * config_.embed_dim, config_.embed_dim);
}

LogitVector ToyModel::forward(std::span<const ToyItem> items) const {
  const int d = config_.embed_dim;
  const int h = config_.hidden_dim;
  const int l = config_.vocab_size;

  // Mean pool; an empty input pools to the zero vector so the model is
  // defined on the empty prefix too.
  std::vector<double> pooled(d, 0.0);
  for (const ToyItem& item : items) {
    if (std::holds_alternative<int>(item)) {
      const std::span<const double> row = embedding_row(std::get<int>(item));
      for (int c = 0; c < d; ++c) pooled[c] += row[c];
    } else {
      const std::vector<double>& row = std::get<std::vector<double>>(item);
      if (static_cast<int>(row.size()) != d) {
        throw Error(ErrorKind::InvalidInput,
                    "embedding row has dimension " + std::to_string(row.size()) +
                        ", model expects " + std::to_string(d));
      }
      for (int c = 0; c < d; ++c) {
        if (!std::isfinite(row[c])) {
          throw Error(ErrorKind::InvalidInput, "embedding row contains a non-finite value");
        }
        pooled[c] += row[c];
      }
    }
  }
  if (!items.empty()) {
    for (double& v : pooled) v /= static_cast<double>(items.size());
  }

  std::vector<double> hidden(h);
  for (int r = 0; r < h; ++r) {
    double acc = b1_[r];
    const double* w = &w1_[std::size_t(r) * d];
    for (int c = 0; c < d; ++c) acc += w[c] * pooled[c];
    hidden[r] = std::tanh(acc);
  }

  LogitVector logits;
  logits.values.resize(l);
  for (int r = 0; r < l; ++r) {
    double acc = b2_[r];
    const double* w = &w2_[std::size_t(r) * h];
    for (int c = 0; c < h; ++c) acc += w[c] * hidden[c];
    logits.values[r] = acc;
  }
  return logits;
}

std::vector<LogitVector> toy_rollout(const ToyModel& model, std::span<const ToyItem> items,
                                     int k) {
  if (k < 1) {
    throw Error(ErrorKind::InvalidInput, "rollout length must be >= 1");
  }
  if (k > model.horizon()) {
    throw Error(ErrorKind::InvalidHorizon,
                "rollout length " + std::to_string(k) + " exceeds the model horizon " +
                    std::to_string(model.horizon()));
  }
  if (items.empty()) {
    throw Error(ErrorKind::InvalidInput, "rollout input is empty");
  }

  std::vector<ToyItem> sequence(items.begin(), items.end());
  std::vector<LogitVector> per_position;
  per_position.reserve(k);
  for (int pos = 0; pos < k; ++pos) {
    LogitVector logits = model.forward(sequence);
    const int next = static_cast<int>(argmax_index(logits.values));
    per_position.push_back(std::move(logits));
    if (pos + 1 < k) sequence.emplace_back(next);
  }
  return per_position;
}

std::vector<double> toy_input_logprobs(const ToyModel& model, std::span<const int> tokens) {
  if (tokens.empty()) {
    throw Error(ErrorKind::InvalidInput, "token sequence is empty");
  }
  std::vector<double> logprobs;
  logprobs.reserve(tokens.size());
  std::vector<ToyItem> prefix;
  for (int token : tokens) {
    const LogitVector logits = model.forward(prefix);
    const std::vector<double> probs = softmax_with_temperature(logits, Temperature(1.0));
    if (token < 0 || token >= model.vocab_size()) {
      throw Error(ErrorKind::InvalidToken, "token id " + std::to_string(token) + " out of range");
    }
    logprobs.push_back(std::log(probs[token]));
    prefix.emplace_back(token);
  }
  return logprobs;
}

std::vector<ToyItem> items_from_tokens(std::span<const int> tokens) {
  std::vector<ToyItem> items;
  items.reserve(tokens.size());
  for (int token : tokens) items.emplace_back(token);
  return items;
}

ToyBackend::ToyBackend(std::shared_ptr<const ToyModel> model) : model_(std::move(model)) {}

ToyBackend::ToyBackend(std::shared_ptr<const ToyModel> model, EmbeddingMatrix virtual_instruction)
    : model_(std::move(model)),
      virtual_instruction_(std::make_unique<EmbeddingMatrix>(std::move(virtual_instruction))) {
  if (virtual_instruction_->dim != model_->embed_dim()) {
    throw Error(ErrorKind::InvalidInput,
                "virtual instruction dimension " + std::to_string(virtual_instruction_->dim) +
                    " does not match the model embed dim " +
                    std::to_string(model_->embed_dim()));
  }
}

ToyBackend::~ToyBackend() = default;

std::string ToyBackend::id() const {
  return virtual_instruction_ ? "toy+virtual" : "toy";
}

BackendResponse ToyBackend::score(const BackendRequest& request) {
  if (request.max_positions < 1) {
    throw Error(ErrorKind::InvalidRequest, "max_positions must be >= 1");
  }

  std::vector<ToyItem> items;
  if (virtual_instruction_) {
    for (int r = 0; r < virtual_instruction_->rows; ++r) {
      const auto row = virtual_instruction_->row(r);
      items.emplace_back(std::vector<double>(row.begin(), row.end()));
    }
    const std::vector<int> query = model_->tokenize(request.prompt.query_text());
    for (int token : query) items.emplace_back(token);
  } else {
    const std::vector<int> tokens = model_->tokenize(request.prompt.full_text);
    items = items_from_tokens(tokens);
  }

  BackendResponse response;
  response.backend_id = id();
  for (LogitVector& logits : toy_rollout(*model_, items, request.max_positions)) {
    response.per_position.push_back(TokenDistribution{std::move(logits)});
  }
  return response;
}

std::optional<std::vector<double>> ToyBackend::input_logprobs(const BackendRequest& request) {
  const std::vector<int> tokens = model_->tokenize(request.prompt.full_text);
  return toy_input_logprobs(*model_, tokens);
}

}  // namespace fjd
