#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "fjd/backend.hpp"

namespace fjd {

// OpenAI-compatible completions endpoint. The credential is read from the
// named environment variable, never from the config file.
struct HttpEndpointConfig {
  std::string base_url;  // e.g. http://127.0.0.1:8080
  std::string path = "/v1/completions";
  std::string model;
  std::string api_key_env = "FJD_API_KEY";
  int top_logprobs = 5;
  int max_retries = 3;
  int initial_backoff_ms = 200;
  int max_in_flight = 4;
  // Request prompt-token logprobs via echo so the PPL baseline works.
  bool echo_prompt_logprobs = false;
  int timeout_seconds = 30;
};

HttpEndpointConfig http_config_from_json(const std::string& text);
HttpEndpointConfig load_http_config(const std::filesystem::path& path);

// Parses a completion response body into per-position top-k logprob maps.
// Missing logprobs are an unsupported-endpoint error; inconsistent maps
// (masses summing past 1) are rejected here.
std::vector<TokenDistribution> parse_completion_logprobs(const std::string& body);

// Prompt-token logprobs from an echo response; the first entry (no
// conditioning context) arrives as null and is skipped.
std::vector<double> parse_echo_logprobs(const std::string& body);

// Builds the request body for a scoring call.
std::string completion_request_body(const HttpEndpointConfig& config,
                                    const std::string& prompt_text, int max_positions,
                                    bool echo);

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpEndpointConfig config);
  ~HttpBackend() override;

  std::string id() const override;
  BackendResponse score(const BackendRequest& request) override;
  std::optional<std::vector<double>> input_logprobs(const BackendRequest& request) override;

 private:
  std::string post_with_retries(const std::string& body);

  HttpEndpointConfig config_;
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace fjd
