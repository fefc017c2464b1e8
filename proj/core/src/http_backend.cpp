#include "fjd/http_backend.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <semaphore>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "fjd/errors.hpp"

namespace fjd {

HttpEndpointConfig http_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::ParseError, std::string("endpoint config: ") + e.what());
  }
  HttpEndpointConfig config;
  if (!j.contains("base_url")) {
    throw Error(ErrorKind::SchemaError, "endpoint config needs \"base_url\"");
  }
  config.base_url = j.at("base_url").get<std::string>();
  config.path = j.value("path", config.path);
  config.model = j.value("model", config.model);
  config.api_key_env = j.value("api_key_env", config.api_key_env);
  config.top_logprobs = j.value("top_logprobs", config.top_logprobs);
  config.max_retries = j.value("max_retries", config.max_retries);
  config.initial_backoff_ms = j.value("initial_backoff_ms", config.initial_backoff_ms);
  config.max_in_flight = j.value("max_in_flight", config.max_in_flight);
  config.echo_prompt_logprobs = j.value("echo_prompt_logprobs", config.echo_prompt_logprobs);
  config.timeout_seconds = j.value("timeout_seconds", config.timeout_seconds);
  if (config.max_in_flight < 1 || config.max_retries < 0 || config.top_logprobs < 1) {
    throw Error(ErrorKind::SchemaError, "endpoint config has out-of-range values");
  }
  return config;
}

HttpEndpointConfig load_http_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::IoError, "cannot open endpoint config " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return http_config_from_json(buffer.str());
}

namespace {

const nlohmann::json* find_logprobs(const nlohmann::json& body) {
  if (!body.contains("choices") || !body.at("choices").is_array() ||
      body.at("choices").empty()) {
    return nullptr;
  }
  const nlohmann::json& choice = body.at("choices").at(0);
  if (!choice.contains("logprobs") || choice.at("logprobs").is_null()) {
    return nullptr;
  }
  return &choice.at("logprobs");
}

nlohmann::json parse_body(const std::string& body) {
  try {
    return nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::ParseError, std::string("completion response: ") + e.what());
  }
}

}  // namespace

std::vector<TokenDistribution> parse_completion_logprobs(const std::string& body) {
  const nlohmann::json parsed = parse_body(body);
  const nlohmann::json* logprobs = find_logprobs(parsed);
  if (!logprobs || !logprobs->contains("top_logprobs")) {
    throw Error(ErrorKind::UnsupportedEndpoint,
                "completion response carries no top_logprobs");
  }

  std::vector<TokenDistribution> positions;
  for (const nlohmann::json& entry : logprobs->at("top_logprobs")) {
    if (entry.is_null()) continue;  // echoed prompt positions may be null
    TopKLogprobs map;
    double total = 0.0;
    for (const auto& [token, lp] : entry.items()) {
      const double value = lp.get<double>();
      if (value > 0.0) {
        throw Error(ErrorKind::InconsistentLogprobs,
                    "positive logprob for token \"" + token + "\"");
      }
      map[token] = value;
      total += std::exp(value);
    }
    if (map.empty()) {
      throw Error(ErrorKind::UnsupportedEndpoint, "empty top_logprobs entry");
    }
    if (total > 1.0 + 1e-6) {
      throw Error(ErrorKind::InconsistentLogprobs,
                  "top_logprobs masses sum to " + std::to_string(total));
    }
    positions.push_back(TokenDistribution{std::move(map)});
  }
  if (positions.empty()) {
    throw Error(ErrorKind::UnsupportedEndpoint, "no scored positions in response");
  }
  return positions;
}

std::vector<double> parse_echo_logprobs(const std::string& body) {
  const nlohmann::json parsed = parse_body(body);
  const nlohmann::json* logprobs = find_logprobs(parsed);
  if (!logprobs || !logprobs->contains("token_logprobs")) {
    throw Error(ErrorKind::UnsupportedEndpoint,
                "echo response carries no token_logprobs");
  }
  std::vector<double> values;
  for (const nlohmann::json& lp : logprobs->at("token_logprobs")) {
    if (lp.is_null()) continue;  // first prompt token has no context
    const double value = lp.get<double>();
    if (value > 0.0) {
      throw Error(ErrorKind::InconsistentLogprobs, "positive echoed logprob");
    }
    values.push_back(value);
  }
  if (values.empty()) {
    throw Error(ErrorKind::UnsupportedEndpoint, "echo response has no usable logprobs");
  }
  return values;
}

std::string completion_request_body(const HttpEndpointConfig& config,
                                    const std::string& prompt_text, int max_positions,
                                    bool echo) {
  nlohmann::ordered_json j;
  if (!config.model.empty()) j["model"] = config.model;
  j["prompt"] = prompt_text;
  j["max_tokens"] = echo ? 0 : max_positions;
  j["logprobs"] = config.top_logprobs;
  j["temperature"] = 0.0;  // detection scaling happens locally on the logprobs
  if (echo) j["echo"] = true;
  return j.dump();
}

struct HttpBackend::Impl {
  httplib::Client client;
  std::counting_semaphore<64> in_flight;

  Impl(const std::string& base_url, int timeout_seconds, int max_in_flight)
      : client(base_url), in_flight(max_in_flight) {
    client.set_connection_timeout(timeout_seconds, 0);
    client.set_read_timeout(timeout_seconds, 0);
    client.set_keep_alive(true);
  }
};

HttpBackend::HttpBackend(HttpEndpointConfig config)
    : config_(std::move(config)),
      impl_(std::make_unique<Impl>(config_.base_url, config_.timeout_seconds,
                                   std::min(config_.max_in_flight, 64))) {
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (key && *key) {
    impl_->client.set_bearer_token_auth(key);
  }
}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::id() const { return "http:" + config_.base_url; }

std::string HttpBackend::post_with_retries(const std::string& body) {
  // Bounded in-flight requests; one slow call never serializes the harness.
  impl_->in_flight.acquire();
  struct Release {
    std::counting_semaphore<64>& sem;
    ~Release() { sem.release(); }
  } release{impl_->in_flight};

  std::string retry_after;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      const auto delay =
          std::chrono::milliseconds(config_.initial_backoff_ms << (attempt - 1));
      std::this_thread::sleep_for(delay);
    }
    httplib::Result res = impl_->client.Post(config_.path, body, "application/json");
    if (!res) continue;  // transport failure, retry
    if (res->status == 200) return res->body;
    if (res->status == 429) {
      retry_after = res->get_header_value("Retry-After");
      continue;
    }
    if (res->status >= 500) continue;
    throw Error(ErrorKind::BackendUnavailable,
                "endpoint returned HTTP " + std::to_string(res->status));
  }
  if (!retry_after.empty()) {
    throw Error(ErrorKind::RetryExhausted,
                "rate-limited after " + std::to_string(config_.max_retries) +
                    " retries (Retry-After: " + retry_after + ")");
  }
  throw Error(ErrorKind::BackendUnavailable,
              "no successful response after " + std::to_string(config_.max_retries) +
                  " retries");
}

BackendResponse HttpBackend::score(const BackendRequest& request) {
  if (request.max_positions < 1) {
    throw Error(ErrorKind::InvalidRequest, "max_positions must be >= 1");
  }
  const auto start = std::chrono::steady_clock::now();
  const std::string body = post_with_retries(completion_request_body(
      config_, request.prompt.full_text, request.max_positions, /*echo=*/false));

  BackendResponse response;
  response.backend_id = id();
  response.per_position = parse_completion_logprobs(body);
  response.latency = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::steady_clock::now() - start);
  if (response.per_position.size() < static_cast<std::size_t>(request.max_positions)) {
    response.truncated = true;
  }
  return response;
}

std::optional<std::vector<double>> HttpBackend::input_logprobs(const BackendRequest& request) {
  if (!config_.echo_prompt_logprobs) {
    return std::nullopt;  // PPL needs echo support; never approximate it
  }
  const std::string body = post_with_retries(
      completion_request_body(config_, request.prompt.full_text, 0, /*echo=*/true));
  return parse_echo_logprobs(body);
}

}  // namespace fjd
