#include <algorithm>
#include <cmath>
#include <memory>

#include <doctest.h>

#include "fjd/errors.hpp"
#include "fjd/rng.hpp"
#include "fjd/toy_model.hpp"
#include "fjd/virtual_instruction.hpp"

using namespace fjd;

namespace {

ToyModel small_model(std::uint64_t seed = 42) {
  ToyModelConfig config;
  config.vocab_size = 16;
  config.embed_dim = 4;
  config.hidden_dim = 6;
  config.seed = seed;
  return ToyModel(config);
}

}  // namespace

TEST_CASE("forward is deterministic and finite") {
  const ToyModel model = small_model();
  const std::vector<ToyItem> items = {ToyItem{1}, ToyItem{5}, ToyItem{9}};
  const LogitVector a = model.forward(items);
  const LogitVector b = model.forward(items);
  CHECK(a.values == b.values);
  CHECK(a.values.size() == 16);
  for (double v : a.values) CHECK(std::isfinite(v));

  // Different seeds give different parameters.
  const ToyModel other = small_model(43);
  CHECK(other.forward(items).values != a.values);
  CHECK(other.fingerprint() != model.fingerprint());
}

TEST_CASE("mean pooling makes the forward pass permutation invariant") {
  const ToyModel model = small_model();
  const std::vector<ToyItem> forward_order = {ToyItem{2}, ToyItem{7}, ToyItem{11}};
  const std::vector<ToyItem> reversed = {ToyItem{11}, ToyItem{7}, ToyItem{2}};
  CHECK(model.forward(forward_order).values == model.forward(reversed).values);
}

TEST_CASE("embedding rows can stand in for their tokens") {
  const ToyModel model = small_model();
  const auto row = model.embedding_row(3);
  const std::vector<ToyItem> by_id = {ToyItem{3}, ToyItem{8}};
  const std::vector<ToyItem> by_row = {ToyItem{std::vector<double>(row.begin(), row.end())},
                                       ToyItem{8}};
  const LogitVector a = model.forward(by_id);
  const LogitVector b = model.forward(by_row);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    CHECK(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-15));
  }
}

TEST_CASE("dimension and token validation") {
  const ToyModel model = small_model();
  CHECK_THROWS_AS(model.forward(std::vector<ToyItem>{ToyItem{std::vector<double>{1.0}}}),
                  Error);
  CHECK_THROWS_AS(model.embedding_row(99), Error);
  try {
    model.embedding_row(-1);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidToken);
  }
}

TEST_CASE("finite-difference gradients agree across step sizes") {
  const ToyModel model = small_model();
  const int d = model.embed_dim();
  std::vector<double> row(d, 0.3);
  const int target_logit = 5;

  const auto logit_at = [&](const std::vector<double>& r) {
    const std::vector<ToyItem> items = {ToyItem{r}, ToyItem{2}};
    return model.forward(items).values[target_logit];
  };

  for (int c = 0; c < d; ++c) {
    const auto fd = [&](double h) {
      std::vector<double> up = row, down = row;
      up[c] += h;
      down[c] -= h;
      return (logit_at(up) - logit_at(down)) / (2.0 * h);
    };
    const double coarse = fd(1e-4);
    const double fine = fd(1e-5);  // independent second difference
    if (std::abs(fine) > 1e-10) {
      CHECK(std::abs(coarse - fine) / std::abs(fine) < 1e-3);
    } else {
      CHECK(std::abs(coarse - fine) < 1e-8);
    }
  }
}

TEST_CASE("tokenizer") {
  ToyModelConfig config;  // default vocab = alphabet
  const ToyModel model{config};

  SUBCASE("folds case and round-trips through the alphabet") {
    const std::vector<int> tokens = model.tokenize("Tell me a story.");
    CHECK(tokens.size() == 16);
    CHECK(tokens == model.tokenize("tell me a story."));
    for (int t : tokens) {
      CHECK(t >= 0);
      CHECK(t < model.vocab_size());
    }
  }

  SUBCASE("out-of-alphabet characters are invalid tokens") {
    try {
      model.tokenize("caf\xc3\xa9");
      FAIL("expected invalid-token");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InvalidToken);
    }
  }

  SUBCASE("small-vocab models cannot tokenize text") {
    const ToyModel small = small_model();
    CHECK_THROWS_AS(small.tokenize("abc"), Error);
  }
}

TEST_CASE("rollout produces one distribution per position") {
  const ToyModel model = small_model();
  const std::vector<ToyItem> items = {ToyItem{1}, ToyItem{2}};
  const std::vector<LogitVector> rollout = toy_rollout(model, items, 4);
  CHECK(rollout.size() == 4);
  // Greedy continuation: rerunning must give identical logits.
  const std::vector<LogitVector> again = toy_rollout(model, items, 4);
  for (int pos = 0; pos < 4; ++pos) {
    CHECK(rollout[pos].values == again[pos].values);
  }
  CHECK_THROWS_AS(toy_rollout(model, items, model.horizon() + 1), Error);
}

TEST_CASE("teacher-forced input logprobs are consistent with forward") {
  const ToyModel model = small_model();
  const std::vector<int> tokens = {3, 1, 4};
  const std::vector<double> logprobs = toy_input_logprobs(model, tokens);
  REQUIRE(logprobs.size() == 3);
  for (double lp : logprobs) CHECK(lp < 0.0);

  // First entry conditions on the empty prefix.
  const LogitVector first = model.forward(std::vector<ToyItem>{});
  const std::vector<double> probs = softmax_with_temperature(first, Temperature(1.0));
  CHECK(logprobs[0] == doctest::Approx(std::log(probs[3])).epsilon(1e-12));
}

TEST_CASE("toy backend scores assembled prompts") {
  auto model = std::make_shared<ToyModel>(ToyModelConfig{});
  ToyBackend backend(model);
  CHECK(backend.id() == "toy");

  BackendRequest request;
  request.prompt = assemble(Instruction{"good-assistant", "You are a good Assistant.",
                                        Placement::Prefix, " "},
                            "tell me a story");
  request.max_positions = 2;
  const BackendResponse response = backend.score(request);
  REQUIRE(response.per_position.size() == 2);
  CHECK(response.per_position[0].full().values.size() ==
        std::size_t(ToyModel::alphabet_size()));

  const auto logprobs = backend.input_logprobs(request);
  REQUIRE(logprobs);
  CHECK(logprobs->size() == request.prompt.full_text.size());
}

TEST_CASE("toy backend with a virtual instruction prepends rows to the query") {
  auto model = std::make_shared<ToyModel>(ToyModelConfig{});
  EmbeddingMatrix virtual_instruction = EmbeddingMatrix::zeros(2, model->embed_dim());
  for (double& v : virtual_instruction.values) v = 0.25;
  ToyBackend backend(model, virtual_instruction);
  CHECK(backend.id() == "toy+virtual");

  BackendRequest request;
  request.prompt = assemble(Instruction::none(), "short query");
  request.max_positions = 1;
  const BackendResponse with_virtual = backend.score(request);

  // Must differ from the bare query and equal a hand-built mixed forward.
  ToyBackend bare(model);
  const BackendResponse without = bare.score(request);
  CHECK(with_virtual.per_position[0].full().values != without.per_position[0].full().values);

  std::vector<ToyItem> items;
  items.emplace_back(std::vector<double>(model->embed_dim(), 0.25));
  items.emplace_back(std::vector<double>(model->embed_dim(), 0.25));
  for (int t : model->tokenize("short query")) items.emplace_back(t);
  CHECK(with_virtual.per_position[0].full().values == model->forward(items).values);
}
