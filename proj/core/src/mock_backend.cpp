#include "fjd/mock_backend.hpp"

#include <cmath>

#include "fjd/errors.hpp"
#include "fjd/rng.hpp"

namespace fjd {

namespace {

struct RequestContext {
  std::string id;
  Label label;
};

RequestContext context_for(const BackendRequest& request) {
  const auto id_it = request.metadata.find("id");
  const auto label_it = request.metadata.find("label");
  if (id_it == request.metadata.end() || label_it == request.metadata.end()) {
    throw Error(ErrorKind::InvalidRequest,
                "mock backend needs \"id\" and \"label\" in request metadata");
  }
  return RequestContext{id_it->second, label_from_string(label_it->second)};
}

}  // namespace

MockBackend::MockBackend(MockProfile profile) : profile_(profile) {
  if (profile_.vocab_size < 2) {
    throw Error(ErrorKind::InvalidInput, "mock vocab size must be >= 2");
  }
  if (profile_.benign_sharpness <= 0.0 || profile_.jailbreak_sharpness <= 0.0) {
    throw Error(ErrorKind::InvalidInput, "mock sharpness values must be positive");
  }
  if (profile_.instruction_boost < 0.0) {
    throw Error(ErrorKind::InvalidInput, "instruction boost must be nonnegative");
  }
}

std::string MockBackend::id() const { return "mock"; }

BackendResponse MockBackend::score(const BackendRequest& request) {
  if (request.max_positions < 1) {
    throw Error(ErrorKind::InvalidRequest, "max_positions must be >= 1");
  }
  const RequestContext ctx = context_for(request);
  const bool benign = ctx.label == Label::Benign;
  const double tail_spread =
      benign ? profile_.benign_tail_spread : profile_.jailbreak_tail_spread;
  const double base_sharpness =
      benign ? profile_.benign_sharpness : profile_.jailbreak_sharpness;

  BackendResponse response;
  response.backend_id = id();
  response.per_position.reserve(request.max_positions);
  for (int pos = 0; pos < request.max_positions; ++pos) {
    rng::Engine eng = rng::seeded(profile_.seed, rng::fnv1a64(ctx.id),
                                  static_cast<std::uint64_t>(pos));

    LogitVector logits;
    logits.values.resize(profile_.vocab_size);
    for (double& v : logits.values) {
      v = rng::next_gaussian(eng) * tail_spread;
    }
    // The boost enters after all draws, so raising it on a fixed seed moves
    // benign margins up without touching anything else.
    double margin = base_sharpness + rng::next_gaussian(eng) * profile_.margin_noise_sd;
    if (benign && request.prompt.has_instruction()) {
      margin += profile_.instruction_boost;
    }
    const std::size_t hot = rng::next_below(eng, profile_.vocab_size);
    logits.values[hot] = margin;
    response.per_position.push_back(TokenDistribution{std::move(logits)});
  }
  return response;
}

std::optional<std::vector<double>> MockBackend::input_logprobs(const BackendRequest& request) {
  const RequestContext ctx = context_for(request);
  const double mean = ctx.label == Label::Benign ? profile_.benign_input_logprob_mean
                                                 : profile_.jailbreak_input_logprob_mean;
  rng::Engine eng = rng::seeded(profile_.seed ^ 0x70706cULL, rng::fnv1a64(ctx.id), 0);
  std::vector<double> logprobs(profile_.input_token_count);
  for (double& lp : logprobs) {
    lp = -std::abs(mean + rng::next_gaussian(eng) * profile_.input_logprob_sd);
  }
  return logprobs;
}

}  // namespace fjd
