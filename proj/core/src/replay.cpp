#include "fjd/replay.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "fjd/errors.hpp"
#include "fjd/rng.hpp"

namespace fjd {

namespace {

nlohmann::ordered_json distribution_to_json(const TokenDistribution& distribution) {
  if (distribution.is_full()) {
    return nlohmann::ordered_json{{"kind", "full"}, {"logits", distribution.full().values}};
  }
  nlohmann::ordered_json logprobs = nlohmann::ordered_json::object();
  for (const auto& [token, lp] : distribution.topk()) logprobs[token] = lp;
  return nlohmann::ordered_json{{"kind", "topk"}, {"logprobs", std::move(logprobs)}};
}

TokenDistribution distribution_from_json(const nlohmann::json& j, const std::string& context) {
  if (!j.contains("kind")) {
    throw Error(ErrorKind::ParseError, context + ": position entry lacks \"kind\"");
  }
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "full") {
    LogitVector logits;
    logits.values = j.at("logits").get<std::vector<double>>();
    if (logits.values.empty()) {
      throw Error(ErrorKind::ParseError, context + ": empty logits array");
    }
    return TokenDistribution{std::move(logits)};
  }
  if (kind == "topk") {
    TopKLogprobs entries;
    double total = 0.0;
    for (const auto& [token, lp] : j.at("logprobs").items()) {
      const double value = lp.get<double>();
      if (value > 0.0) {
        throw Error(ErrorKind::InconsistentLogprobs,
                    context + ": positive logprob for token \"" + token + "\"");
      }
      entries[token] = value;
      total += std::exp(value);
    }
    if (entries.empty()) {
      throw Error(ErrorKind::ParseError, context + ": empty logprob map");
    }
    if (total > 1.0 + 1e-6) {
      throw Error(ErrorKind::InconsistentLogprobs,
                  context + ": logprob masses sum to " + std::to_string(total));
    }
    return TokenDistribution{std::move(entries)};
  }
  throw Error(ErrorKind::ParseError, context + ": unknown position kind \"" + kind + "\"");
}

}  // namespace

std::string replay_record_to_json(const ReplayRecord& record) {
  nlohmann::ordered_json j;
  j["id"] = record.id;
  nlohmann::ordered_json positions = nlohmann::ordered_json::array();
  for (const TokenDistribution& d : record.positions) {
    positions.push_back(distribution_to_json(d));
  }
  j["positions"] = std::move(positions);
  if (record.input_logprobs) {
    j["input_logprobs"] = *record.input_logprobs;
  }
  return j.dump();
}

ReplayRecord replay_record_from_json(const std::string& line, const std::string& context) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::ParseError, context + ": " + e.what());
  }
  if (!j.contains("id") || !j.contains("positions")) {
    throw Error(ErrorKind::ParseError, context + ": record needs \"id\" and \"positions\"");
  }
  ReplayRecord record;
  record.id = j.at("id").get<std::string>();
  for (const auto& position : j.at("positions")) {
    record.positions.push_back(distribution_from_json(position, context));
  }
  if (record.positions.empty()) {
    throw Error(ErrorKind::ParseError, context + ": record has no positions");
  }
  if (j.contains("input_logprobs")) {
    record.input_logprobs = j.at("input_logprobs").get<std::vector<double>>();
  }
  return record;
}

std::string replay_key(const AssembledPrompt& prompt, int positions) {
  // Two FNV streams with different salts; 128 bits is plenty for content
  // addressing at corpus scale.
  const std::string payload =
      prompt.full_text + '\x1f' + std::to_string(positions);
  const std::uint64_t a = rng::fnv1a64(payload);
  const std::uint64_t b = rng::fnv1a64(payload + '\x1e');
  char buf[36];
  std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(a),
                static_cast<unsigned long long>(b));
  return buf;
}

ReplayBackend::ReplayBackend(const std::filesystem::path& path) : source_(path.string()) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::IoError, "cannot open replay file " + path.string());
  }
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string context = source_ + ":" + std::to_string(line_no);
    ReplayRecord record = replay_record_from_json(line, context);
    if (!records_.emplace(record.id, std::move(record)).second) {
      throw Error(ErrorKind::ParseError, context + ": duplicate record id");
    }
  }
}

std::string ReplayBackend::id() const { return "replay"; }

const ReplayRecord& ReplayBackend::find(const BackendRequest& request) const {
  const std::string key = replay_key(request.prompt, request.max_positions);
  auto it = records_.find(key);
  if (it != records_.end()) return it->second;
  const auto meta = request.metadata.find("id");
  if (meta != request.metadata.end()) {
    it = records_.find(meta->second);
    if (it != records_.end()) return it->second;
  }
  throw Error(ErrorKind::MissingRecord,
              "no replay record for key " + key +
                  (meta != request.metadata.end() ? " or id \"" + meta->second + "\"" : "") +
                  " in " + source_);
}

BackendResponse ReplayBackend::score(const BackendRequest& request) {
  const ReplayRecord& record = find(request);
  BackendResponse response;
  response.backend_id = id();
  response.per_position = record.positions;
  if (record.positions.size() < static_cast<std::size_t>(request.max_positions)) {
    response.truncated = true;
  }
  return response;
}

std::optional<std::vector<double>> ReplayBackend::input_logprobs(const BackendRequest& request) {
  return find(request).input_logprobs;
}

ReplayWriter::ReplayWriter(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) {
    std::filesystem::create_directories(path_.parent_path());
  }
}

void ReplayWriter::append(const ReplayRecord& record) {
  std::ofstream out(path_, std::ios::app);
  if (!out) {
    throw Error(ErrorKind::IoError, "cannot open replay file for append: " + path_.string());
  }
  out << replay_record_to_json(record) << '\n';
}

}  // namespace fjd
