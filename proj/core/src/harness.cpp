#include "fjd/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fjd/errors.hpp"
#include "fjd/perplexity.hpp"
#include "fjd/rng.hpp"

namespace fjd {

std::vector<PromptRecord> ingest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::IoError, "cannot open corpus file " + path.string());
  }

  std::vector<PromptRecord> records;
  std::map<std::string, int> first_line_of;
  std::vector<std::string> duplicates;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string context = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::ParseError, context + ": " + e.what());
    }
    for (const char* field : {"id", "text", "label"}) {
      if (!j.contains(field)) {
        throw Error(ErrorKind::SchemaError,
                    context + ": record lacks required field \"" + field + "\"");
      }
    }
    PromptRecord record;
    record.id = j.at("id").get<std::string>();
    record.text = j.at("text").get<std::string>();
    record.label = label_from_string(j.at("label").get<std::string>());
    record.source = j.value("source", std::string{});
    if (j.contains("attack") && !j.at("attack").is_null()) {
      record.attack = j.at("attack").get<std::string>();
    }
    if (record.text.empty()) {
      throw Error(ErrorKind::SchemaError, context + ": empty prompt text");
    }
    if (!first_line_of.emplace(record.id, line_no).second) {
      duplicates.push_back(record.id);
    }
    records.push_back(std::move(record));
  }
  if (!duplicates.empty()) {
    std::string listed;
    for (const std::string& id : duplicates) {
      if (!listed.empty()) listed += ", ";
      listed += '"' + id + '"';
    }
    throw Error(ErrorKind::IngestError, path.string() + ": duplicate ids: " + listed);
  }
  return records;
}

std::vector<PromptRecord> balance_classes(std::vector<PromptRecord> records,
                                          std::uint64_t seed) {
  std::vector<std::size_t> jailbreak, benign;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (records[i].label == Label::Jailbreak ? jailbreak : benign).push_back(i);
  }
  if (jailbreak.empty() || benign.empty()) {
    throw Error(ErrorKind::DegenerateDataset, "balancing needs both classes");
  }
  const std::size_t keep = std::min(jailbreak.size(), benign.size());
  auto& majority = jailbreak.size() > benign.size() ? jailbreak : benign;

  rng::Engine eng = rng::seeded(seed, 0x62616cULL);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + rng::next_below(eng, majority.size() - i);
    std::swap(majority[i], majority[j]);
  }
  majority.resize(keep);

  std::vector<std::size_t> kept;
  kept.insert(kept.end(), jailbreak.begin(), jailbreak.end());
  kept.insert(kept.end(), benign.begin(), benign.end());
  std::sort(kept.begin(), kept.end());  // preserve corpus order

  std::vector<PromptRecord> out;
  out.reserve(kept.size());
  for (std::size_t i : kept) out.push_back(std::move(records[i]));
  return out;
}

SplitCorpus split_records(std::span<const PromptRecord> records, double train_fraction,
                          std::uint64_t seed) {
  if (!(train_fraction > 0.0) || !(train_fraction < 1.0)) {
    throw Error(ErrorKind::InvalidInput, "train fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng::Engine eng = rng::seeded(seed, 0x73706c69ULL);
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    const std::size_t j = i + rng::next_below(eng, order.size() - i);
    std::swap(order[i], order[j]);
  }

  const std::size_t train_count = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(records.size())));
  SplitCorpus split;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < train_count ? split.train : split.eval).push_back(records[order[i]]);
  }

  const auto has_both = [](const std::vector<PromptRecord>& side) {
    bool jail = false, benign = false;
    for (const PromptRecord& r : side) {
      (r.label == Label::Jailbreak ? jail : benign) = true;
    }
    return jail && benign;
  };
  if (!has_both(split.train) || !has_both(split.eval)) {
    throw Error(ErrorKind::DegenerateDataset, "split leaves a side without both classes");
  }
  return split;
}

LogitCache::LogitCache(std::filesystem::path directory) : directory_(std::move(directory)) {
  std::filesystem::create_directories(directory_);
}

std::filesystem::path LogitCache::file_for(const std::string& backend_id) const {
  return directory_ / (backend_id + ".jsonl");
}

void LogitCache::load_file(const std::string& backend_id) {
  if (loaded_.count(backend_id)) return;
  auto& index = loaded_[backend_id];
  const std::filesystem::path path = file_for(backend_id);
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ReplayRecord record =
        replay_record_from_json(line, path.string() + ":" + std::to_string(line_no));
    index[record.id] = std::move(record);
  }
}

std::optional<ReplayRecord> LogitCache::lookup(const std::string& backend_id,
                                               const std::string& key) {
  std::lock_guard<std::mutex> lock(mutex_);
  load_file(backend_id);
  const auto& index = loaded_[backend_id];
  const auto it = index.find(key);
  if (it == index.end()) return std::nullopt;
  return it->second;
}

void LogitCache::store(const std::string& backend_id, const std::string& key,
                       ReplayRecord record) {
  std::lock_guard<std::mutex> lock(mutex_);
  load_file(backend_id);
  record.id = key;
  auto& index = loaded_[backend_id];
  if (index.count(key)) return;  // first write wins; hits must stay bit-identical
  std::ofstream out(file_for(backend_id), std::ios::app);
  if (!out) {
    throw Error(ErrorKind::IoError, "cannot append to cache file " + file_for(backend_id).string());
  }
  out << replay_record_to_json(record) << '\n';
  index.emplace(key, std::move(record));
}

CachingBackend::CachingBackend(Backend& inner, LogitCache& cache)
    : inner_(inner), cache_(cache) {}

std::string CachingBackend::id() const { return inner_.id(); }

BackendResponse CachingBackend::score(const BackendRequest& request) {
  const std::string key = replay_key(request.prompt, request.max_positions);
  if (std::optional<ReplayRecord> hit = cache_.lookup(inner_.id(), key)) {
    BackendResponse response;
    response.backend_id = inner_.id();
    response.per_position = std::move(hit->positions);
    return response;
  }
  BackendResponse response = inner_.score(request);
  ++backend_calls_;
  ReplayRecord record;
  record.positions = response.per_position;
  cache_.store(inner_.id(), key, std::move(record));
  return response;
}

std::optional<std::vector<double>> CachingBackend::input_logprobs(
    const BackendRequest& request) {
  // Input logprobs are keyed separately (position count 0 marker).
  const std::string key = replay_key(request.prompt, 0) + ":ppl";
  if (std::optional<ReplayRecord> hit = cache_.lookup(inner_.id(), key)) {
    return hit->input_logprobs;
  }
  std::optional<std::vector<double>> logprobs = inner_.input_logprobs(request);
  ++backend_calls_;
  if (logprobs) {
    ReplayRecord record;
    // The replay format requires at least one position; store a one-entry
    // marker distribution alongside the logprobs.
    record.positions.push_back(TokenDistribution{TopKLogprobs{{"", 0.0}}});
    record.input_logprobs = logprobs;
    cache_.store(inner_.id(), key, std::move(record));
  }
  return logprobs;
}

const char* to_string(DetectorFamily family) {
  switch (family) {
    case DetectorFamily::FT: return "ft";
    case DetectorFamily::FJD: return "fjd";
    case DetectorFamily::FJDK: return "fjd-k";
    case DetectorFamily::FJDLI: return "fjd-li";
    case DetectorFamily::PPL: return "ppl";
  }
  return "fjd";
}

DetectorFamily detector_family_from_string(std::string_view text) {
  if (text == "ft") return DetectorFamily::FT;
  if (text == "fjd") return DetectorFamily::FJD;
  if (text == "fjd-k") return DetectorFamily::FJDK;
  if (text == "fjd-li") return DetectorFamily::FJDLI;
  if (text == "ppl") return DetectorFamily::PPL;
  throw Error(ErrorKind::SchemaError, "unknown detector family \"" + std::string(text) + "\"");
}

namespace {

BackendRequest request_for(const PromptRecord& record, const Instruction& instruction,
                           int positions) {
  BackendRequest request;
  request.prompt = assemble(instruction, record.text);
  request.max_positions = positions;
  request.metadata["id"] = record.id;
  request.metadata["label"] = to_string(record.label);
  return request;
}

void check_failure_budget(std::size_t failed, std::size_t total) {
  if (total > 0 && static_cast<double>(failed) > 0.10 * static_cast<double>(total)) {
    throw Error(ErrorKind::AbortedRun,
                std::to_string(failed) + " of " + std::to_string(total) +
                    " records failed (> 10%)");
  }
}

}  // namespace

ScoreOutcome score_corpus(std::span<const PromptRecord> records,
                          const DetectorConfig& config, Backend& backend) {
  const Temperature tau(config.tau);
  ScoreOutcome outcome;
  for (const PromptRecord& record : records) {
    try {
      const BackendRequest request = request_for(record, config.instruction, config.k);
      const BackendResponse response = backend.score(request);
      if (response.per_position.size() < static_cast<std::size_t>(config.k)) {
        throw Error(ErrorKind::InsufficientTokens,
                    "backend returned " + std::to_string(response.per_position.size()) +
                        " positions, need " + std::to_string(config.k));
      }
      double sum = 0.0;
      for (int pos = 0; pos < config.k; ++pos) {
        sum += distribution_confidence(response.per_position[pos], tau).value;
      }
      outcome.scored.push_back(
          ScoredExample{record.id, sum / static_cast<double>(config.k), record.label});
    } catch (const Error&) {
      outcome.failed_ids.push_back(record.id);
    }
  }
  check_failure_budget(outcome.failed_ids.size(), records.size());
  return outcome;
}

ScoreOutcome score_corpus_perplexity(std::span<const PromptRecord> records,
                                     const Instruction& instruction, Backend& backend) {
  ScoreOutcome outcome;
  for (const PromptRecord& record : records) {
    try {
      const BackendRequest request = request_for(record, instruction, 1);
      const std::optional<std::vector<double>> logprobs = backend.input_logprobs(request);
      if (!logprobs) {
        throw Error(ErrorKind::BackendUnavailable,
                    "backend \"" + backend.id() + "\" cannot echo input logprobs");
      }
      outcome.scored.push_back(
          ScoredExample{record.id, perplexity(*logprobs).value, record.label});
    } catch (const Error&) {
      outcome.failed_ids.push_back(record.id);
    }
  }
  check_failure_budget(outcome.failed_ids.size(), records.size());
  return outcome;
}

std::vector<CalibrationExample> fetch_distributions(std::span<const PromptRecord> records,
                                                    const Instruction& instruction, int k,
                                                    Backend& backend,
                                                    std::vector<std::string>* failed_ids) {
  std::vector<CalibrationExample> examples;
  std::vector<std::string> failed;
  for (const PromptRecord& record : records) {
    try {
      const BackendRequest request = request_for(record, instruction, k);
      BackendResponse response = backend.score(request);
      if (response.per_position.size() < static_cast<std::size_t>(k)) {
        throw Error(ErrorKind::InsufficientTokens, "short response");
      }
      CalibrationExample example;
      example.positions = std::move(response.per_position);
      example.label = record.label;
      examples.push_back(std::move(example));
    } catch (const Error&) {
      failed.push_back(record.id);
    }
  }
  check_failure_budget(failed.size(), records.size());
  if (failed_ids) *failed_ids = std::move(failed);
  return examples;
}

namespace {

std::vector<ScoredExample> score_examples_at(
    const std::vector<CalibrationExample>& examples,
    std::span<const PromptRecord> records, const std::vector<std::string>& failed_ids,
    double tau, int k) {
  const Temperature temperature(tau);
  const std::set<std::string> failed(failed_ids.begin(), failed_ids.end());
  std::vector<ScoredExample> scored;
  scored.reserve(examples.size());
  std::size_t example_index = 0;
  for (const PromptRecord& record : records) {
    if (failed.count(record.id)) continue;
    const CalibrationExample& example = examples[example_index++];
    double sum = 0.0;
    for (int pos = 0; pos < k; ++pos) {
      sum += distribution_confidence(example.positions[pos], temperature).value;
    }
    scored.push_back(ScoredExample{record.id, sum / static_cast<double>(k), record.label});
  }
  return scored;
}

void check_disjoint(std::span<const PromptRecord> train, std::span<const PromptRecord> test) {
  std::set<std::string> train_ids;
  for (const PromptRecord& r : train) train_ids.insert(r.id);
  for (const PromptRecord& r : test) {
    if (train_ids.count(r.id)) {
      throw Error(ErrorKind::LeakageError,
                  "id \"" + r.id + "\" appears in both train and test");
    }
  }
}

}  // namespace

ExperimentResult run_experiment(std::span<const PromptRecord> train,
                                std::span<const PromptRecord> test, DetectorFamily family,
                                const Instruction& instruction, Backend& backend,
                                const ExperimentProtocol& protocol) {
  check_disjoint(train, test);

  ExperimentResult result;
  result.family = family;
  result.backend_id = backend.id();

  if (family == DetectorFamily::FJDLI && backend.id().rfind("toy", 0) != 0) {
    throw Error(ErrorKind::InvalidInput,
                "fjd-li needs the toy backend, got \"" + backend.id() + "\"");
  }

  if (family == DetectorFamily::PPL) {
    result.orientation = ppl_detector_orientation();
    const ScoreOutcome train_scores = score_corpus_perplexity(train, instruction, backend);
    const ScoreOutcome test_scores = score_corpus_perplexity(test, instruction, backend);
    result.calibration.best_tau = 1.0;
    result.calibration.policy = protocol.policy;
    result.calibration.threshold =
        select_threshold(train_scores.scored, protocol.policy, result.orientation);
    result.report = repeated_eval(test_scores.scored, protocol.eval,
                                  result.calibration.threshold, result.orientation);
    result.scored = static_cast<int>(test_scores.scored.size());
    result.failed = static_cast<int>(test_scores.failed_ids.size());
    return result;
  }

  const int k = family == DetectorFamily::FJDK ? protocol.k : 1;
  const bool scaling = protocol.calibrate_tau && family != DetectorFamily::FT;
  const Instruction& effective_instruction =
      family == DetectorFamily::FT ? Instruction::none() : instruction;

  // One backend pass per split; every grid temperature rescales these.
  std::vector<std::string> train_failed, test_failed;
  const std::vector<CalibrationExample> train_examples =
      fetch_distributions(train, effective_instruction, k, backend, &train_failed);
  const std::vector<CalibrationExample> test_examples =
      fetch_distributions(test, effective_instruction, k, backend, &test_failed);

  const TemperatureGrid grid = scaling ? protocol.grid : TemperatureGrid::single(1.0);
  result.calibration = calibrate_temperature(train_examples, grid, k, protocol.policy);

  const std::vector<ScoredExample> test_scores = score_examples_at(
      test_examples, test, test_failed, result.calibration.best_tau, k);
  result.report = repeated_eval(test_scores, protocol.eval, result.calibration.threshold,
                                Orientation::LowScoreIsJailbreak);
  result.scored = static_cast<int>(test_scores.size());
  result.failed = static_cast<int>(test_failed.size());
  return result;
}

std::vector<AblationCell> run_ablation(std::span<const PromptRecord> train,
                                       std::span<const PromptRecord> test,
                                       const Instruction& instruction, Backend& backend,
                                       const ExperimentProtocol& protocol) {
  std::vector<AblationCell> cells;
  for (const bool ai : {false, true}) {
    for (const bool ts : {false, true}) {
      ExperimentProtocol cell_protocol = protocol;
      cell_protocol.calibrate_tau = ts;
      const Instruction cell_instruction = ai ? instruction : Instruction::none();
      // Family stays FJD for all four cells so the instruction and scaling
      // axes vary independently; the no-AI/no-TS cell is the FT baseline.
      AblationCell cell;
      cell.affirmative_instruction = ai;
      cell.temperature_scaling = ts;
      cell.result = run_experiment(train, test, DetectorFamily::FJD, cell_instruction,
                                   backend, cell_protocol);
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

std::string ablation_csv(const std::vector<AblationCell>& cells, std::string_view backend) {
  std::string csv = "ai,ts,tau,auc_mean,auc_std,fpr_mean,tpr_mean,f1_mean,backend\n";
  char buf[256];
  for (const AblationCell& cell : cells) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.6f,%.6f,%.6f,%.6f,%.6f,%.*s\n",
                  cell.affirmative_instruction ? 1 : 0, cell.temperature_scaling ? 1 : 0,
                  cell.result.calibration.best_tau, cell.result.report.auc.mean,
                  cell.result.report.auc.stddev, cell.result.report.fpr.mean,
                  cell.result.report.tpr.mean, cell.result.report.f1.mean,
                  int(backend.size()), backend.data());
    csv += buf;
  }
  return csv;
}

std::string manifest_to_json(const RunManifest& manifest, int indent) {
  nlohmann::ordered_json j;
  j["command"] = manifest.command;
  j["config_fingerprint"] = manifest.config_fingerprint;
  j["backend_id"] = manifest.backend_id;
  j["corpus_fingerprints"] = manifest.corpus_fingerprints;
  j["seed"] = manifest.seed;
  j["started_at"] = manifest.started_at;
  j["output_hash"] = manifest.output_hash;
  return j.dump(indent);
}

std::string content_hash(std::string_view bytes) {
  const std::uint64_t a = rng::fnv1a64(bytes);
  const std::uint64_t b = rng::fnv1a64(std::string(bytes) + '\x1e');
  char buf[36];
  std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(a),
                static_cast<unsigned long long>(b));
  return buf;
}

std::string file_fingerprint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::IoError, "cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return content_hash(buffer.str());
}

}  // namespace fjd
