// fjd: first-token-confidence jailbreak detection toolkit.
//
// Subcommands: score, calibrate, evaluate, ablate, learn-instruction,
// attribute, capture, report. Every command resolves its configuration from
// an optional JSON config file plus flags (flags win), writes outputs
// atomically, and drops a .manifest.json next to each primary output.
//
// Exit codes: 0 success, 1 usage/config error, 2 aborted run,
// 3 backend unavailable, 4 data or schema error.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fjd/attribution.hpp"
#include "fjd/calibration.hpp"
#include "fjd/errors.hpp"
#include "fjd/harness.hpp"
#include "fjd/http_backend.hpp"
#include "fjd/mock_backend.hpp"
#include "fjd/perplexity.hpp"
#include "fjd/replay.hpp"
#include "fjd/toy_model.hpp"
#include "fjd/virtual_instruction.hpp"

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitAborted = 2;
constexpr int kExitBackend = 3;
constexpr int kExitData = 4;

int exit_code_for(fjd::ErrorKind kind) {
  switch (kind) {
    case fjd::ErrorKind::AbortedRun:
      return kExitAborted;
    case fjd::ErrorKind::BackendUnavailable:
    case fjd::ErrorKind::RetryExhausted:
    case fjd::ErrorKind::UnsupportedEndpoint:
      return kExitBackend;
    case fjd::ErrorKind::ParseError:
    case fjd::ErrorKind::SchemaError:
    case fjd::ErrorKind::IngestError:
    case fjd::ErrorKind::IoError:
    case fjd::ErrorKind::MissingRecord:
    case fjd::ErrorKind::LeakageError:
    case fjd::ErrorKind::DegenerateDataset:
    case fjd::ErrorKind::InconsistentLogprobs:
    case fjd::ErrorKind::InvalidToken:
      return kExitData;
    default:
      return kExitUsage;
  }
}

// Write-temp-then-rename; a failed run never leaves a partial output file.
void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw fjd::Error(fjd::ErrorKind::IoError, "cannot write " + tmp.string());
    }
    out << content;
    if (!out) {
      throw fjd::Error(fjd::ErrorKind::IoError, "short write on " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

// Everything a run needs, resolved from config file then flags.
struct Options {
  std::string config_file;

  std::string backend = "mock";
  // mock profile
  fjd::MockProfile mock;
  // replay
  std::string replay_file;
  // toy model
  fjd::ToyModelConfig toy;
  std::string embedding_file;
  // http
  std::string http_config_file;

  std::string instruction_id = "none";
  std::string instruction_text;
  std::string placement = "prefix";
  std::string catalog_file;

  double tau = 1.0;
  bool calibrate = false;
  int k = 1;
  double threshold = 0.5;
  std::string threshold_policy = "max-f1";
  fjd::TemperatureGrid grid;

  int repeats = 5;
  double fraction = 0.8;
  std::uint64_t seed = 0;
  bool stratified = false;

  std::string corpus_file;
  std::string train_file;
  std::string test_file;
  double split_fraction = 0.5;
  bool balance = false;

  std::string family = "fjd";
  std::string attack_label;

  std::string cache_dir;
  std::string out_file;

  // Flags the user actually set; config-file values yield to these.
  std::set<std::string> explicit_keys;

  bool is_set(const std::string& key) const { return explicit_keys.count(key) > 0; }
};

void apply_config_file(Options& opt) {
  if (opt.config_file.empty()) return;
  std::ifstream in(opt.config_file);
  if (!in) {
    throw fjd::Error(fjd::ErrorKind::IoError, "cannot open config " + opt.config_file);
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw fjd::Error(fjd::ErrorKind::ParseError, opt.config_file + ": " + e.what());
  }

  const auto load = [&](const char* key, auto& target) {
    if (j.contains(key) && !opt.is_set(key)) {
      j.at(key).get_to(target);
    }
  };
  load("backend", opt.backend);
  load("replay_file", opt.replay_file);
  load("http_config", opt.http_config_file);
  load("embedding", opt.embedding_file);
  load("instruction", opt.instruction_id);
  load("instruction_text", opt.instruction_text);
  load("placement", opt.placement);
  load("catalog", opt.catalog_file);
  load("tau", opt.tau);
  load("calibrate", opt.calibrate);
  load("k", opt.k);
  load("threshold", opt.threshold);
  load("threshold_policy", opt.threshold_policy);
  load("repeats", opt.repeats);
  load("fraction", opt.fraction);
  load("seed", opt.seed);
  load("stratified", opt.stratified);
  load("corpus", opt.corpus_file);
  load("train", opt.train_file);
  load("test", opt.test_file);
  load("split_fraction", opt.split_fraction);
  load("balance", opt.balance);
  load("family", opt.family);
  load("attack", opt.attack_label);
  load("cache_dir", opt.cache_dir);
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    if (!opt.is_set("grid-start")) opt.grid.start = g.value("start", opt.grid.start);
    if (!opt.is_set("grid-stop")) opt.grid.stop = g.value("stop", opt.grid.stop);
    if (!opt.is_set("grid-step")) opt.grid.step = g.value("step", opt.grid.step);
  }
  // Nested keys fall back to the flag-settable fields; a flag that was
  // actually given still wins.
  const auto nested = [&](const char* section, const char* key, const std::string& flag,
                          auto& target) {
    if (j.contains(section) && j.at(section).contains(key) && !opt.is_set(flag)) {
      j.at(section).at(key).get_to(target);
    }
  };
  nested("mock", "benign_sharpness", "mock-benign-sharpness", opt.mock.benign_sharpness);
  nested("mock", "jailbreak_sharpness", "mock-jailbreak-sharpness",
         opt.mock.jailbreak_sharpness);
  nested("mock", "instruction_boost", "mock-instruction-boost", opt.mock.instruction_boost);
  nested("mock", "seed", "mock-seed", opt.mock.seed);
  nested("mock", "vocab_size", "mock-vocab-size", opt.mock.vocab_size);
  nested("mock", "margin_noise_sd", "mock-margin-noise-sd", opt.mock.margin_noise_sd);
  nested("mock", "benign_tail_spread", "mock-benign-tail-spread",
         opt.mock.benign_tail_spread);
  nested("mock", "jailbreak_tail_spread", "mock-jailbreak-tail-spread",
         opt.mock.jailbreak_tail_spread);
  nested("mock", "benign_input_logprob_mean", "mock-benign-input-logprob-mean",
         opt.mock.benign_input_logprob_mean);
  nested("mock", "jailbreak_input_logprob_mean", "mock-jailbreak-input-logprob-mean",
         opt.mock.jailbreak_input_logprob_mean);
  nested("toy", "vocab_size", "toy-vocab-size", opt.toy.vocab_size);
  nested("toy", "embed_dim", "toy-embed-dim", opt.toy.embed_dim);
  nested("toy", "hidden_dim", "toy-hidden-dim", opt.toy.hidden_dim);
  nested("toy", "seed", "toy-seed", opt.toy.seed);
  nested("toy", "max_positions", "toy-max-positions", opt.toy.max_positions);
}

ordered_json resolved_config_json(const Options& opt, const std::string& command) {
  ordered_json j;
  j["command"] = command;
  j["backend"] = opt.backend;
  j["instruction"] = opt.instruction_id;
  if (!opt.instruction_text.empty()) j["instruction_text"] = opt.instruction_text;
  j["placement"] = opt.placement;
  j["tau"] = opt.tau;
  j["calibrate"] = opt.calibrate;
  j["k"] = opt.k;
  j["threshold"] = opt.threshold;
  j["threshold_policy"] = opt.threshold_policy;
  j["grid"] = {{"start", opt.grid.start}, {"stop", opt.grid.stop}, {"step", opt.grid.step}};
  j["repeats"] = opt.repeats;
  j["fraction"] = opt.fraction;
  j["seed"] = opt.seed;
  j["stratified"] = opt.stratified;
  j["family"] = opt.family;
  j["balance"] = opt.balance;
  j["split_fraction"] = opt.split_fraction;
  if (!opt.embedding_file.empty()) j["embedding"] = opt.embedding_file;
  if (!opt.replay_file.empty()) j["replay_file"] = opt.replay_file;
  if (!opt.cache_dir.empty()) j["cache_dir"] = opt.cache_dir;
  if (opt.backend == "mock") {
    j["mock"] = {{"benign_sharpness", opt.mock.benign_sharpness},
                 {"jailbreak_sharpness", opt.mock.jailbreak_sharpness},
                 {"instruction_boost", opt.mock.instruction_boost},
                 {"seed", opt.mock.seed},
                 {"vocab_size", opt.mock.vocab_size},
                 {"benign_tail_spread", opt.mock.benign_tail_spread},
                 {"jailbreak_tail_spread", opt.mock.jailbreak_tail_spread}};
  }
  if (opt.backend == "toy") {
    j["toy"] = {{"vocab_size", opt.toy.vocab_size},
                {"embed_dim", opt.toy.embed_dim},
                {"hidden_dim", opt.toy.hidden_dim},
                {"seed", opt.toy.seed},
                {"max_positions", opt.toy.max_positions}};
  }
  return j;
}

struct BackendBundle {
  std::unique_ptr<fjd::Backend> backend;
  std::unique_ptr<fjd::LogitCache> cache;
  std::unique_ptr<fjd::CachingBackend> caching;
  std::shared_ptr<fjd::ToyModel> toy_model;

  fjd::Backend& active() { return caching ? *caching : *backend; }
};

BackendBundle make_backend(const Options& opt) {
  BackendBundle bundle;
  if (opt.backend == "mock") {
    bundle.backend = std::make_unique<fjd::MockBackend>(opt.mock);
  } else if (opt.backend == "replay") {
    if (opt.replay_file.empty()) {
      throw fjd::Error(fjd::ErrorKind::InvalidInput, "replay backend needs --replay-file");
    }
    bundle.backend = std::make_unique<fjd::ReplayBackend>(opt.replay_file);
  } else if (opt.backend == "toy") {
    bundle.toy_model = std::make_shared<fjd::ToyModel>(opt.toy);
    if (!opt.embedding_file.empty()) {
      const fjd::LoadedEmbedding loaded = fjd::load_embedding(opt.embedding_file);
      if (loaded.model_fingerprint != bundle.toy_model->fingerprint()) {
        throw fjd::Error(fjd::ErrorKind::InvalidInput,
                         "embedding file was trained against a different toy model");
      }
      bundle.backend =
          std::make_unique<fjd::ToyBackend>(bundle.toy_model, std::move(loaded.matrix));
    } else {
      bundle.backend = std::make_unique<fjd::ToyBackend>(bundle.toy_model);
    }
  } else if (opt.backend == "http") {
    if (opt.http_config_file.empty()) {
      throw fjd::Error(fjd::ErrorKind::InvalidInput, "http backend needs --http-config");
    }
    bundle.backend =
        std::make_unique<fjd::HttpBackend>(fjd::load_http_config(opt.http_config_file));
  } else {
    throw fjd::Error(fjd::ErrorKind::InvalidInput, "unknown backend \"" + opt.backend + "\"");
  }

  std::string cache_dir = opt.cache_dir;
  if (const char* env = std::getenv("FJD_CACHE_DIR"); env && *env && cache_dir.empty()) {
    cache_dir = env;
  }
  if (!cache_dir.empty()) {
    bundle.cache = std::make_unique<fjd::LogitCache>(cache_dir);
    bundle.caching = std::make_unique<fjd::CachingBackend>(*bundle.backend, *bundle.cache);
  }
  return bundle;
}

fjd::Instruction resolve_instruction(const Options& opt) {
  if (!opt.instruction_text.empty()) {
    return fjd::Instruction{"inline", opt.instruction_text,
                            fjd::placement_from_string(opt.placement), " "};
  }
  const std::vector<fjd::Instruction> catalog = opt.catalog_file.empty()
                                                    ? fjd::builtin_catalog()
                                                    : fjd::load_catalog(opt.catalog_file);
  return fjd::catalog_entry(catalog, opt.instruction_id);
}

void write_manifest(const Options& opt, const std::string& command,
                    const std::filesystem::path& out_path,
                    const std::string& output_content,
                    const std::vector<std::string>& corpus_files,
                    const std::string& backend_id) {
  fjd::RunManifest manifest;
  manifest.command = command;
  manifest.config_fingerprint = fjd::content_hash(resolved_config_json(opt, command).dump());
  manifest.backend_id = backend_id;
  for (const std::string& file : corpus_files) {
    if (!file.empty()) manifest.corpus_fingerprints[file] = fjd::file_fingerprint(file);
  }
  manifest.seed = opt.seed;
  manifest.started_at = utc_timestamp();
  manifest.output_hash = fjd::content_hash(output_content);
  write_atomic(out_path.string() + ".manifest.json", fjd::manifest_to_json(manifest) + "\n");
}

fjd::ExperimentProtocol protocol_from(const Options& opt) {
  fjd::ExperimentProtocol protocol;
  protocol.grid = opt.calibrate ? opt.grid : fjd::TemperatureGrid::single(opt.tau);
  protocol.policy = fjd::threshold_policy_from_string(opt.threshold_policy);
  protocol.eval.repeats = opt.repeats;
  protocol.eval.subsample_fraction = opt.fraction;
  protocol.eval.seed = opt.seed;
  protocol.eval.stratified = opt.stratified;
  protocol.k = opt.k;
  return protocol;
}

struct Corpora {
  std::vector<fjd::PromptRecord> train;
  std::vector<fjd::PromptRecord> test;
  std::vector<std::string> files;
};

Corpora load_corpora(const Options& opt) {
  Corpora corpora;
  if (!opt.train_file.empty() && !opt.test_file.empty()) {
    corpora.train = fjd::ingest(opt.train_file);
    corpora.test = fjd::ingest(opt.test_file);
    corpora.files = {opt.train_file, opt.test_file};
  } else if (!opt.corpus_file.empty()) {
    std::vector<fjd::PromptRecord> records = fjd::ingest(opt.corpus_file);
    if (opt.balance) records = fjd::balance_classes(std::move(records), opt.seed);
    fjd::SplitCorpus split = fjd::split_records(records, opt.split_fraction, opt.seed);
    corpora.train = std::move(split.train);
    corpora.test = std::move(split.eval);
    corpora.files = {opt.corpus_file};
  } else {
    throw fjd::Error(fjd::ErrorKind::InvalidInput,
                     "need either --corpus or both --train and --test");
  }
  return corpora;
}

std::string attack_label(const Options& opt, const std::vector<fjd::PromptRecord>& records) {
  if (!opt.attack_label.empty()) return opt.attack_label;
  for (const fjd::PromptRecord& record : records) {
    if (record.attack) return *record.attack;
  }
  return "unlabeled";
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_score(const Options& opt) {
  const std::vector<fjd::PromptRecord> records = fjd::ingest(opt.corpus_file);
  BackendBundle bundle = make_backend(opt);

  fjd::DetectorConfig config;
  config.instruction = resolve_instruction(opt);
  config.tau = opt.tau;
  config.k = opt.k;

  const fjd::ScoreOutcome outcome = fjd::score_corpus(records, config, bundle.active());

  std::string lines;
  for (const fjd::ScoredExample& example : outcome.scored) {
    const fjd::DetectionVerdict verdict =
        fjd::detect(fjd::Confidence{example.score}, opt.threshold);
    ordered_json line;
    line["id"] = example.id;
    line["confidence"] = example.score;
    line["verdict"] = fjd::to_string(verdict.label);
    line["label"] = fjd::to_string(example.label);
    lines += line.dump() + "\n";
  }
  write_atomic(opt.out_file, lines);
  write_manifest(opt, "score", opt.out_file, lines, {opt.corpus_file},
                 bundle.active().id());
  if (!outcome.failed_ids.empty()) {
    std::cerr << "warning: " << outcome.failed_ids.size() << " records failed\n";
  }
  return kExitOk;
}

int cmd_report(const Options& opt) {
  std::ifstream in(opt.corpus_file);
  if (!in) {
    throw fjd::Error(fjd::ErrorKind::IoError, "cannot open scored file " + opt.corpus_file);
  }
  std::vector<fjd::ScoredExample> scored;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw fjd::Error(fjd::ErrorKind::ParseError,
                       opt.corpus_file + ":" + std::to_string(line_no) + ": " + e.what());
    }
    fjd::ScoredExample example;
    example.id = j.at("id").get<std::string>();
    example.score = j.contains("confidence") ? j.at("confidence").get<double>()
                                             : j.at("score").get<double>();
    example.label = fjd::label_from_string(j.at("label").get<std::string>());
    scored.push_back(std::move(example));
  }

  fjd::EvalProtocol protocol;
  protocol.repeats = opt.repeats;
  protocol.subsample_fraction = opt.fraction;
  protocol.seed = opt.seed;
  protocol.stratified = opt.stratified;

  const fjd::EvalReport report =
      fjd::repeated_eval(scored, protocol, opt.threshold,
                         fjd::Orientation::LowScoreIsJailbreak);
  const std::string out = fjd::eval_report_to_json(report) + "\n";
  write_atomic(opt.out_file, out);
  write_manifest(opt, "report", opt.out_file, out, {opt.corpus_file}, "none");
  std::cout << "auc " << report.auc.mean << " +/- " << report.auc.stddev << "\n";
  return kExitOk;
}

int cmd_calibrate(const Options& opt) {
  Corpora corpora = load_corpora(opt);
  BackendBundle bundle = make_backend(opt);
  const fjd::Instruction instruction = resolve_instruction(opt);

  std::vector<std::string> failed;
  const std::vector<fjd::CalibrationExample> examples =
      fjd::fetch_distributions(corpora.train, instruction, opt.k, bundle.active(), &failed);
  const fjd::CalibrationResult result = fjd::calibrate_temperature(
      examples, opt.grid, opt.k, fjd::threshold_policy_from_string(opt.threshold_policy));

  const std::string out = fjd::calibration_result_to_json(result) + "\n";
  write_atomic(opt.out_file, out);
  write_manifest(opt, "calibrate", opt.out_file, out, corpora.files, bundle.active().id());

  // Curve data for tau-sweep plots.
  const std::filesystem::path curve_path =
      std::filesystem::path(opt.out_file).replace_extension(".curve.csv");
  write_atomic(curve_path, fjd::calibration_curve_csv(result));

  std::cout << "best_tau " << result.best_tau << " train_auc " << result.best_train_auc
            << " threshold " << result.threshold << "\n";
  return kExitOk;
}

int cmd_evaluate(const Options& opt) {
  Corpora corpora = load_corpora(opt);
  BackendBundle bundle = make_backend(opt);
  const fjd::Instruction instruction = resolve_instruction(opt);
  const fjd::DetectorFamily family = fjd::detector_family_from_string(opt.family);

  const fjd::ExperimentResult result = fjd::run_experiment(
      corpora.train, corpora.test, family, instruction, bundle.active(), protocol_from(opt));

  ordered_json out;
  out["family"] = fjd::to_string(result.family);
  out["backend"] = result.backend_id;
  out["orientation"] = fjd::to_string(result.orientation);
  out["calibration"] = json::parse(fjd::calibration_result_to_json(result.calibration));
  out["report"] = json::parse(fjd::eval_report_to_json(result.report));
  out["scored"] = result.scored;
  out["failed"] = result.failed;
  const std::string text = out.dump(2) + "\n";
  write_atomic(opt.out_file, text);
  write_manifest(opt, "evaluate", opt.out_file, text, corpora.files, result.backend_id);

  const std::filesystem::path csv_path =
      std::filesystem::path(opt.out_file).replace_extension(".csv");
  write_atomic(csv_path, fjd::eval_report_csv_header() + "\n" +
                             fjd::eval_report_csv_row(result.report, opt.family,
                                                      attack_label(opt, corpora.test),
                                                      result.backend_id) +
                             "\n");

  std::cout << "auc " << result.report.auc.mean << " +/- " << result.report.auc.stddev
            << " (tau " << result.calibration.best_tau << ", threshold "
            << result.calibration.threshold << ")\n";
  return kExitOk;
}

int cmd_ablate(const Options& opt) {
  Corpora corpora = load_corpora(opt);
  BackendBundle bundle = make_backend(opt);
  const fjd::Instruction instruction = resolve_instruction(opt);

  fjd::ExperimentProtocol protocol = protocol_from(opt);
  protocol.grid = opt.grid;  // the TS-on cells always sweep

  const std::vector<fjd::AblationCell> cells = fjd::run_ablation(
      corpora.train, corpora.test, instruction, bundle.active(), protocol);

  const std::string csv = fjd::ablation_csv(cells, bundle.active().id());
  write_atomic(opt.out_file, csv);
  write_manifest(opt, "ablate", opt.out_file, csv, corpora.files, bundle.active().id());

  for (const fjd::AblationCell& cell : cells) {
    std::cout << (cell.affirmative_instruction ? "+AI" : "-AI")
              << (cell.temperature_scaling ? " +TS" : " -TS") << " auc "
              << cell.result.report.auc.mean << "\n";
  }
  return kExitOk;
}

int cmd_learn_instruction(const Options& opt, const std::string& optimizer_name,
                          int budget, double learning_rate) {
  Corpora corpora = load_corpora(opt);
  const auto model = std::make_shared<fjd::ToyModel>(opt.toy);

  std::vector<fjd::LiExample> train;
  for (const fjd::PromptRecord& record : corpora.train) {
    train.push_back(fjd::LiExample{model->tokenize(record.text), record.label});
  }

  const fjd::Instruction instruction = resolve_instruction(opt);
  const fjd::EmbeddingMatrix init = fjd::init_from_text(instruction, *model);

  fjd::OptimizerConfig config;
  config.kind = optimizer_name == "random" ? fjd::OptimizerKind::RandomSearch
                                           : fjd::OptimizerKind::FiniteDifferenceGd;
  config.learning_rate = learning_rate;
  config.seed = opt.seed;

  const fjd::OptimizationResult result =
      fjd::optimize_instruction(*model, train, init, budget, config);

  fjd::save_embedding(opt.out_file, result.embeddings, opt.seed, model->fingerprint());

  std::string trace = "evaluations,loss,best_loss\n";
  char buf[96];
  for (const fjd::TracePoint& point : result.trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", point.evaluations, point.loss,
                  point.best_loss);
    trace += buf;
  }
  const std::filesystem::path trace_path =
      std::filesystem::path(opt.out_file).replace_extension(".trace.csv");
  write_atomic(trace_path, trace);

  std::ifstream emb(opt.out_file, std::ios::binary);
  std::ostringstream emb_bytes;
  emb_bytes << emb.rdbuf();
  write_manifest(opt, "learn-instruction", opt.out_file, emb_bytes.str(), corpora.files,
                 "toy");

  std::cout << "initial_loss " << result.initial_loss << " final_loss " << result.final_loss
            << " evaluations " << result.trace.size() << "\n";
  return kExitOk;
}

int cmd_attribute(const Options& opt, const std::string& query, const std::string& sc_in,
                  const std::string& sc_out, int horizon) {
  fjd::SaliencyMatrix sc;
  std::vector<std::string> inputs;
  if (!sc_in.empty()) {
    sc = fjd::load_saliency(sc_in);
    inputs.push_back(sc_in);
  } else {
    if (query.empty()) {
      throw fjd::Error(fjd::ErrorKind::InvalidInput, "attribute needs --query or --sc-in");
    }
    const fjd::ToyModel model(opt.toy);
    const fjd::Instruction instruction = resolve_instruction(opt);
    const fjd::AssembledPrompt prompt = fjd::assemble(instruction, query);
    sc = fjd::saliency(model, prompt, horizon);
  }

  const fjd::AttributionResult result = fjd::attribution_over_horizon(sc);
  ordered_json out;
  out["instruction_len"] = result.instruction_len;
  out["query_len"] = result.query_len;
  out["pc"] = result.pc;
  const std::string text = out.dump(2) + "\n";
  write_atomic(opt.out_file, text);
  if (!sc_out.empty()) {
    fjd::save_saliency(sc_out, sc);
  }
  write_manifest(opt, "attribute", opt.out_file, text, inputs, "toy");
  std::cout << "pc_1 " << result.pc.front() << "\n";
  return kExitOk;
}

int cmd_capture(const Options& opt, bool with_ppl) {
  if (opt.cache_dir.empty()) {
    throw fjd::Error(fjd::ErrorKind::InvalidInput, "capture needs --cache-dir");
  }
  const std::vector<fjd::PromptRecord> records = fjd::ingest(opt.corpus_file);
  BackendBundle bundle = make_backend(opt);
  if (!bundle.caching) {
    throw fjd::Error(fjd::ErrorKind::InvalidInput, "capture needs a cacheable backend");
  }

  const fjd::Instruction instruction = resolve_instruction(opt);
  int captured = 0;
  for (const fjd::PromptRecord& record : records) {
    fjd::BackendRequest request;
    request.prompt = fjd::assemble(instruction, record.text);
    request.max_positions = opt.k;
    request.metadata["id"] = record.id;
    request.metadata["label"] = fjd::to_string(record.label);
    bundle.caching->score(request);
    if (with_ppl) bundle.caching->input_logprobs(request);
    ++captured;
  }

  const std::filesystem::path cache_file =
      bundle.cache->file_for(bundle.backend->id());
  std::ifstream in(cache_file, std::ios::binary);
  std::ostringstream bytes;
  bytes << in.rdbuf();
  write_manifest(opt, "capture", cache_file, bytes.str(), {opt.corpus_file},
                 bundle.backend->id());
  std::cout << "captured " << captured << " records into " << cache_file.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"First-token-confidence jailbreak detection toolkit"};
  app.require_subcommand(1);

  Options opt;
  std::string optimizer_name = "fd";
  int budget = 2000;
  double learning_rate = 0.5;
  std::string query, sc_in, sc_out;
  int horizon = 1;
  bool with_ppl = false;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opt.config_file, "JSON config file; flags override its keys");
    cmd->add_option("--backend", opt.backend, "mock | replay | toy | http")
        ->check(CLI::IsMember({"mock", "replay", "toy", "http"}));
    cmd->add_option("--replay-file", opt.replay_file, "replay backend input file");
    cmd->add_option("--http-config", opt.http_config_file, "endpoint config JSON");
    cmd->add_option("--embedding", opt.embedding_file, "learned instruction embedding file");
    cmd->add_option("--instruction", opt.instruction_id, "catalog instruction id");
    cmd->add_option("--instruction-text", opt.instruction_text, "inline instruction text");
    cmd->add_option("--placement", opt.placement, "prefix | suffix")
        ->check(CLI::IsMember({"prefix", "suffix"}));
    cmd->add_option("--catalog", opt.catalog_file, "instruction catalog file (JSON lines)");
    cmd->add_option("--k", opt.k, "number of scored positions")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", opt.seed, "run seed");
    cmd->add_option("--cache-dir", opt.cache_dir, "logit cache directory (or FJD_CACHE_DIR)");
    cmd->add_option("--out", opt.out_file, "output file")->required();
    cmd->add_option("--mock-seed", opt.mock.seed, "mock backend seed");
    cmd->add_option("--mock-benign-sharpness", opt.mock.benign_sharpness, "");
    cmd->add_option("--mock-jailbreak-sharpness", opt.mock.jailbreak_sharpness, "");
    cmd->add_option("--mock-instruction-boost", opt.mock.instruction_boost, "");
    cmd->add_option("--mock-benign-tail-spread", opt.mock.benign_tail_spread, "");
    cmd->add_option("--mock-jailbreak-tail-spread", opt.mock.jailbreak_tail_spread, "");
    cmd->add_option("--toy-seed", opt.toy.seed, "toy model seed");
    cmd->add_option("--toy-embed-dim", opt.toy.embed_dim, "");
    cmd->add_option("--toy-hidden-dim", opt.toy.hidden_dim, "");
    cmd->add_option("--toy-vocab-size", opt.toy.vocab_size, "0 = text alphabet");
    cmd->add_option("--toy-max-positions", opt.toy.max_positions, "");
  };

  const auto add_eval_options = [&](CLI::App* cmd) {
    cmd->add_option("--corpus", opt.corpus_file, "single corpus, split by --split-fraction");
    cmd->add_option("--train", opt.train_file, "train corpus file");
    cmd->add_option("--test", opt.test_file, "test corpus file");
    cmd->add_option("--split-fraction", opt.split_fraction, "train share of --corpus");
    cmd->add_flag("--balance", opt.balance, "downsample the majority class first");
    cmd->add_option("--repeats", opt.repeats, "evaluation repeats");
    cmd->add_option("--fraction", opt.fraction, "test subsample fraction");
    cmd->add_flag("--stratified", opt.stratified, "stratify the subsample by class");
    cmd->add_option("--threshold-policy", opt.threshold_policy,
                    "max-f1 | youden-j | target-fpr:<rate>");
    cmd->add_option("--grid-start", opt.grid.start, "");
    cmd->add_option("--grid-stop", opt.grid.stop, "");
    cmd->add_option("--grid-step", opt.grid.step, "");
    cmd->add_option("--attack", opt.attack_label, "attack label for report rows");
  };

  CLI::App* score = app.add_subcommand("score", "score a corpus and emit verdicts");
  add_common(score);
  score->add_option("--corpus", opt.corpus_file, "corpus file")->required();
  score->add_option("--tau", opt.tau, "softmax temperature");
  score->add_option("--threshold", opt.threshold, "detection threshold");

  CLI::App* calibrate = app.add_subcommand("calibrate", "grid-search tau on a train set");
  add_common(calibrate);
  add_eval_options(calibrate);

  CLI::App* evaluate = app.add_subcommand("evaluate", "calibrate, select, evaluate");
  add_common(evaluate);
  add_eval_options(evaluate);
  evaluate->add_option("--family", opt.family, "ft | fjd | fjd-k | fjd-li | ppl")
      ->check(CLI::IsMember({"ft", "fjd", "fjd-k", "fjd-li", "ppl"}));
  CLI::Option* tau_opt = evaluate->add_option("--tau", opt.tau, "fixed temperature");
  CLI::Option* calibrate_flag =
      evaluate->add_flag("--calibrate", opt.calibrate, "sweep tau on the train split");
  tau_opt->excludes(calibrate_flag);

  CLI::App* ablate = app.add_subcommand("ablate", "2x2 instruction/scaling grid");
  add_common(ablate);
  add_eval_options(ablate);

  CLI::App* learn = app.add_subcommand("learn-instruction",
                                       "optimize a virtual instruction on the toy model");
  add_common(learn);
  add_eval_options(learn);
  learn->add_option("--optimizer", optimizer_name, "fd | random")
      ->check(CLI::IsMember({"fd", "random"}));
  learn->add_option("--budget", budget, "loss evaluations allowed");
  learn->add_option("--learning-rate", learning_rate, "finite-difference step size");

  CLI::App* attribute = app.add_subcommand("attribute", "instruction contribution analysis");
  add_common(attribute);
  attribute->add_option("--query", query, "query text");
  attribute->add_option("--horizon", horizon, "first K generated positions");
  attribute->add_option("--sc-in", sc_in, "load an externally computed saliency matrix");
  attribute->add_option("--sc-out", sc_out, "write the saliency matrix");

  CLI::App* capture = app.add_subcommand("capture", "record live backend responses");
  add_common(capture);
  capture->add_option("--corpus", opt.corpus_file, "corpus file")->required();
  capture->add_flag("--ppl", with_ppl, "also capture input logprobs");

  CLI::App* report = app.add_subcommand("report", "metrics from a scored-example file");
  add_common(report);
  report->add_option("--scored", opt.corpus_file, "scored file from `score`")->required();
  report->add_option("--threshold", opt.threshold, "detection threshold");
  report->add_option("--repeats", opt.repeats, "evaluation repeats");
  report->add_option("--fraction", opt.fraction, "subsample fraction");
  report->add_flag("--stratified", opt.stratified, "stratify the subsample");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    for (const CLI::App* sub : app.get_subcommands()) {
      for (const CLI::Option* option : sub->get_options()) {
        if (option->count() > 0) {
          std::string name = option->get_name();
          if (name.rfind("--", 0) == 0) name = name.substr(2);
          opt.explicit_keys.insert(name);
        }
      }
    }
    apply_config_file(opt);

    if (score->parsed()) return cmd_score(opt);
    if (calibrate->parsed()) return cmd_calibrate(opt);
    if (evaluate->parsed()) return cmd_evaluate(opt);
    if (ablate->parsed()) return cmd_ablate(opt);
    if (learn->parsed()) return cmd_learn_instruction(opt, optimizer_name, budget, learning_rate);
    if (attribute->parsed()) return cmd_attribute(opt, query, sc_in, sc_out, horizon);
    if (capture->parsed()) return cmd_capture(opt, with_ppl);
    if (report->parsed()) return cmd_report(opt);
    std::cerr << "no subcommand\n";
    return kExitUsage;
  } catch (const fjd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
