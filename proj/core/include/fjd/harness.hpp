#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fjd/backend.hpp"
#include "fjd/calibration.hpp"
#include "fjd/metrics.hpp"
#include "fjd/replay.hpp"

namespace fjd {

struct PromptRecord {
  std::string id;
  std::string text;
  Label label = Label::Benign;
  std::string source;
  std::optional<std::string> attack;
};

// Corpus file: JSON lines {"id","text","label","source","attack"}; attack is
// optional. Duplicate ids and missing fields are reported with the offending
// ids / line numbers.
std::vector<PromptRecord> ingest(const std::filesystem::path& path);

// Downsamples the majority class to the minority count, seeded; the kept
// subset is reproducible under the seed.
std::vector<PromptRecord> balance_classes(std::vector<PromptRecord> records,
                                          std::uint64_t seed);

struct SplitCorpus {
  std::vector<PromptRecord> train;
  std::vector<PromptRecord> eval;
};

// Seeded shuffle then split; both sides must end up with both classes.
SplitCorpus split_records(std::span<const PromptRecord> records, double train_fraction,
                          std::uint64_t seed);

// Content-addressed store of backend responses in the replay record format,
// one file per backend id. A warm cache makes scoring a pure function of the
// cache contents, which is what lets a tau sweep cost one backend pass.
class LogitCache {
 public:
  explicit LogitCache(std::filesystem::path directory);

  std::optional<ReplayRecord> lookup(const std::string& backend_id, const std::string& key);
  void store(const std::string& backend_id, const std::string& key, ReplayRecord record);

  std::filesystem::path file_for(const std::string& backend_id) const;

 private:
  void load_file(const std::string& backend_id);

  std::filesystem::path directory_;
  std::mutex mutex_;
  std::map<std::string, std::map<std::string, ReplayRecord>> loaded_;
};

// Cache-first wrapper; misses hit the inner backend and append to the cache.
class CachingBackend : public Backend {
 public:
  CachingBackend(Backend& inner, LogitCache& cache);

  std::string id() const override;
  BackendResponse score(const BackendRequest& request) override;
  std::optional<std::vector<double>> input_logprobs(const BackendRequest& request) override;

  int backend_calls() const { return backend_calls_; }

 private:
  Backend& inner_;
  LogitCache& cache_;
  int backend_calls_ = 0;
};

enum class DetectorFamily { FT, FJD, FJDK, FJDLI, PPL };

const char* to_string(DetectorFamily family);
DetectorFamily detector_family_from_string(std::string_view text);

struct DetectorConfig {
  Instruction instruction = Instruction::none();
  double tau = 1.0;
  int k = 1;
};

struct ScoreOutcome {
  std::vector<ScoredExample> scored;
  std::vector<std::string> failed_ids;
};

// Assemble, fetch the first-k distributions, scale, average. Backend failures
// mark the record failed and the run continues; more than 10% failures abort
// the run. Failed records are excluded from metrics rather than scored 0.
ScoreOutcome score_corpus(std::span<const PromptRecord> records,
                          const DetectorConfig& config, Backend& backend);

// Perplexity over the backend's echoed input logprobs; a backend that cannot
// echo makes the PPL baseline unavailable (backend-unavailable per record).
ScoreOutcome score_corpus_perplexity(std::span<const PromptRecord> records,
                                     const Instruction& instruction, Backend& backend);

// Cached distributions and labels for a record set, the input calibration
// and repeated evaluation share.
std::vector<CalibrationExample> fetch_distributions(std::span<const PromptRecord> records,
                                                    const Instruction& instruction, int k,
                                                    Backend& backend,
                                                    std::vector<std::string>* failed_ids);

struct ExperimentProtocol {
  TemperatureGrid grid;
  ThresholdPolicy policy = ThresholdPolicy::max_f1();
  EvalProtocol eval;
  int k = 1;
  bool calibrate_tau = true;  // false pins tau = 1 (no temperature scaling)
};

struct ExperimentResult {
  EvalReport report;
  CalibrationResult calibration;
  DetectorFamily family = DetectorFamily::FJD;
  Orientation orientation = Orientation::LowScoreIsJailbreak;
  std::string backend_id;
  int scored = 0;
  int failed = 0;
};

// Full pipeline: leakage check, calibrate on train (tau only for scaling
// families), select the threshold on train, evaluate on test under the
// repeated-subsampling protocol.
ExperimentResult run_experiment(std::span<const PromptRecord> train,
                                std::span<const PromptRecord> test, DetectorFamily family,
                                const Instruction& instruction, Backend& backend,
                                const ExperimentProtocol& protocol);

struct AblationCell {
  bool affirmative_instruction = false;
  bool temperature_scaling = false;
  ExperimentResult result;
};

// The 2x2 instruction/scaling grid. The instruction-off cells use the none
// instruction; the scaling-off cells pin tau = 1. Distributions are fetched
// once per instruction setting and reused across the temperature sweep.
std::vector<AblationCell> run_ablation(std::span<const PromptRecord> train,
                                       std::span<const PromptRecord> test,
                                       const Instruction& instruction, Backend& backend,
                                       const ExperimentProtocol& protocol);

std::string ablation_csv(const std::vector<AblationCell>& cells, std::string_view backend);

struct RunManifest {
  std::string command;
  std::string config_fingerprint;
  std::string backend_id;
  std::map<std::string, std::string> corpus_fingerprints;  // path -> hash
  std::uint64_t seed = 0;
  std::string started_at;   // ISO-8601 UTC
  std::string output_hash;  // content hash of the primary output file
};

std::string manifest_to_json(const RunManifest& manifest, int indent = 2);

// Hex content hash used for fingerprints and output hashes.
std::string content_hash(std::string_view bytes);
std::string file_fingerprint(const std::filesystem::path& path);

}  // namespace fjd
