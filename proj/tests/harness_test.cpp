#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <doctest.h>

#include "fjd/errors.hpp"
#include "fjd/harness.hpp"
#include "fjd/mock_backend.hpp"
#include "fjd/perplexity.hpp"
#include "fjd/rng.hpp"

using namespace fjd;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

void write_corpus(const std::filesystem::path& path, int jailbreak, int benign) {
  std::ofstream out(path, std::ios::trunc);
  for (int i = 0; i < jailbreak; ++i) {
    out << R"({"id":"j)" << i << R"(","text":"jailbreak prompt )" << i
        << R"(","label":"jailbreak","source":"synthetic","attack":"mock"})" << '\n';
  }
  for (int i = 0; i < benign; ++i) {
    out << R"({"id":"b)" << i << R"(","text":"benign prompt )" << i
        << R"(","label":"benign","source":"synthetic"})" << '\n';
  }
}

std::vector<PromptRecord> synthetic_records(int jailbreak, int benign,
                                            const std::string& prefix = "") {
  std::vector<PromptRecord> records;
  for (int i = 0; i < jailbreak; ++i) {
    records.push_back(PromptRecord{prefix + "j" + std::to_string(i),
                                   "jailbreak text " + std::to_string(i), Label::Jailbreak,
                                   "synthetic", "mock"});
  }
  for (int i = 0; i < benign; ++i) {
    records.push_back(PromptRecord{prefix + "b" + std::to_string(i),
                                   "benign text " + std::to_string(i), Label::Benign,
                                   "synthetic", std::nullopt});
  }
  return records;
}

MockProfile planted_profile(std::uint64_t seed = 1) {
  MockProfile profile;
  profile.benign_sharpness = 7.0;
  profile.jailbreak_sharpness = 3.0;
  profile.instruction_boost = 2.0;
  profile.seed = seed;
  return profile;
}

// Backend that fails on demand; everything else delegates to a mock.
class FlakyBackend : public Backend {
 public:
  FlakyBackend(MockProfile profile, std::set<std::size_t> fail_on)
      : mock_(profile), fail_on_(std::move(fail_on)) {}

  std::string id() const override { return "flaky"; }

  BackendResponse score(const BackendRequest& request) override {
    if (fail_on_.count(calls_++)) {
      throw Error(ErrorKind::BackendUnavailable, "injected failure");
    }
    return mock_.score(request);
  }

 private:
  MockBackend mock_;
  std::set<std::size_t> fail_on_;
  std::size_t calls_ = 0;
};

}  // namespace

TEST_CASE("ingest") {
  const std::filesystem::path path = temp_path("fjd_corpus_test.jsonl");

  SUBCASE("well-formed file") {
    write_corpus(path, 2, 1);
    const std::vector<PromptRecord> records = ingest(path);
    REQUIRE(records.size() == 3);
    CHECK(records[0].id == "j0");
    CHECK(records[0].label == Label::Jailbreak);
    CHECK(records[0].attack == "mock");
    CHECK(records[2].label == Label::Benign);
    CHECK_FALSE(records[2].attack);
  }

  SUBCASE("duplicate ids are named") {
    std::ofstream out(path, std::ios::trunc);
    out << R"({"id":"x","text":"a","label":"benign"})" << '\n';
    out << R"({"id":"x","text":"b","label":"benign"})" << '\n';
    out.close();
    try {
      ingest(path);
      FAIL("expected ingest error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::IngestError);
      CHECK(std::string(e.what()).find("\"x\"") != std::string::npos);
    }
  }

  SUBCASE("missing fields carry line numbers") {
    std::ofstream out(path, std::ios::trunc);
    out << R"({"id":"ok","text":"a","label":"benign"})" << '\n';
    out << R"({"id":"bad","text":"b"})" << '\n';
    out.close();
    try {
      ingest(path);
      FAIL("expected schema error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::SchemaError);
      CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
  }

  std::filesystem::remove(path);
}

TEST_CASE("balance downsamples the majority class reproducibly") {
  const std::vector<PromptRecord> records = synthetic_records(60, 100);
  const std::vector<PromptRecord> balanced = balance_classes(records, 42);
  int jailbreak = 0, benign = 0;
  for (const PromptRecord& r : balanced) {
    (r.label == Label::Jailbreak ? jailbreak : benign)++;
  }
  CHECK(jailbreak == 60);
  CHECK(benign == 60);

  const std::vector<PromptRecord> again = balance_classes(records, 42);
  std::set<std::string> ids_a, ids_b;
  for (const PromptRecord& r : balanced) ids_a.insert(r.id);
  for (const PromptRecord& r : again) ids_b.insert(r.id);
  CHECK(ids_a == ids_b);

  const std::vector<PromptRecord> other_seed = balance_classes(records, 43);
  std::set<std::string> ids_c;
  for (const PromptRecord& r : other_seed) ids_c.insert(r.id);
  CHECK(ids_a != ids_c);
}

TEST_CASE("split keeps classes on both sides and stays disjoint") {
  const std::vector<PromptRecord> records = synthetic_records(20, 20);
  const SplitCorpus split = split_records(records, 0.5, 7);
  CHECK(split.train.size() == 20);
  CHECK(split.eval.size() == 20);
  std::set<std::string> train_ids;
  for (const PromptRecord& r : split.train) train_ids.insert(r.id);
  for (const PromptRecord& r : split.eval) CHECK_FALSE(train_ids.count(r.id));
}

TEST_CASE("logit cache round trip and warm-cache determinism") {
  const std::filesystem::path cache_dir = temp_path("fjd_cache_test");
  std::filesystem::remove_all(cache_dir);

  MockBackend mock(planted_profile());
  LogitCache cache(cache_dir);
  CachingBackend caching(mock, cache);

  const std::vector<PromptRecord> records = synthetic_records(5, 5);
  DetectorConfig config;
  config.instruction = Instruction{"good-assistant", "You are a good Assistant.",
                                   Placement::Prefix, " "};
  config.tau = 1.5;

  const ScoreOutcome cold = score_corpus(records, config, caching);
  const int cold_calls = caching.backend_calls();
  CHECK(cold_calls == 10);

  const ScoreOutcome warm = score_corpus(records, config, caching);
  CHECK(caching.backend_calls() == cold_calls);  // zero new backend calls
  REQUIRE(warm.scored.size() == cold.scored.size());
  for (std::size_t i = 0; i < warm.scored.size(); ++i) {
    CHECK(warm.scored[i].score == cold.scored[i].score);
  }

  // A fresh cache instance reads the same bytes back from disk.
  LogitCache reopened(cache_dir);
  CachingBackend caching2(mock, reopened);
  const ScoreOutcome reloaded = score_corpus(records, config, caching2);
  CHECK(caching2.backend_calls() == 0);
  for (std::size_t i = 0; i < reloaded.scored.size(); ++i) {
    CHECK(reloaded.scored[i].score == cold.scored[i].score);
  }
  std::filesystem::remove_all(cache_dir);
}

TEST_CASE("empty-instruction config scores exactly like FT mode") {
  MockBackend mock(planted_profile());
  const std::vector<PromptRecord> records = synthetic_records(10, 10);

  DetectorConfig none_config;
  none_config.instruction = Instruction::none();
  const ScoreOutcome via_none = score_corpus(records, none_config, mock);

  // FT mode is the same call path; identical by construction.
  const ScoreOutcome again = score_corpus(records, none_config, mock);
  for (std::size_t i = 0; i < via_none.scored.size(); ++i) {
    CHECK(via_none.scored[i].score == again.scored[i].score);
  }
}

TEST_CASE("one-record corpus against a hand-written replay file") {
  const std::filesystem::path path = temp_path("fjd_hand_replay.jsonl");
  {
    std::ofstream out(path, std::ios::trunc);
    out << R"({"id":"p0","positions":[{"kind":"full","logits":[10,9,1]}]})" << '\n';
  }
  ReplayBackend replay(path);
  const std::vector<PromptRecord> records = {
      PromptRecord{"p0", "the prompt", Label::Jailbreak, "hand", std::nullopt}};
  DetectorConfig config;
  config.tau = 2.0;
  const ScoreOutcome outcome = score_corpus(records, config, replay);
  REQUIRE(outcome.scored.size() == 1);
  // Hand-applied scaling: softmax([10,9,1]/2) max = 0.619.
  CHECK(std::abs(outcome.scored[0].score - 0.619) < 1e-3);
  std::filesystem::remove(path);
}

TEST_CASE("failed records are excluded and bounded") {
  const std::vector<PromptRecord> records = synthetic_records(10, 10);

  SUBCASE("a few failures are tolerated and reported") {
    FlakyBackend flaky(planted_profile(), {0, 5});
    const ScoreOutcome outcome = score_corpus(records, DetectorConfig{}, flaky);
    CHECK(outcome.scored.size() == 18);
    CHECK(outcome.failed_ids.size() == 2);
  }

  SUBCASE("more than 10% failures aborts the run") {
    FlakyBackend flaky(planted_profile(), {0, 2, 4, 6, 8});
    try {
      score_corpus(records, DetectorConfig{}, flaky);
      FAIL("expected aborted-run");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::AbortedRun);
    }
  }
}

TEST_CASE("perplexity scoring uses backend echo") {
  MockBackend mock(planted_profile());
  const std::vector<PromptRecord> records = synthetic_records(8, 8);
  const ScoreOutcome outcome =
      score_corpus_perplexity(records, Instruction::none(), mock);
  CHECK(outcome.scored.size() == 16);
  for (const ScoredExample& e : outcome.scored) CHECK(e.score >= 1.0);

  // Jailbreak records get lower logprobs, hence higher perplexity.
  const double value = auc(outcome.scored, ppl_detector_orientation());
  CHECK(value > 0.8);
}

TEST_CASE("run_experiment") {
  MockBackend mock(planted_profile(11));
  const std::vector<PromptRecord> train = synthetic_records(40, 40, "train-");
  const std::vector<PromptRecord> test = synthetic_records(40, 40, "test-");
  const Instruction instruction{"good-assistant", "You are a good Assistant.",
                                Placement::Prefix, " "};
  ExperimentProtocol protocol;
  protocol.eval.seed = 5;

  SUBCASE("fjd-k with k=1 equals fjd exactly") {
    ExperimentProtocol k_protocol = protocol;
    k_protocol.k = 1;
    const ExperimentResult fjd =
        run_experiment(train, test, DetectorFamily::FJD, instruction, mock, protocol);
    const ExperimentResult fjdk =
        run_experiment(train, test, DetectorFamily::FJDK, instruction, mock, k_protocol);
    CHECK(eval_report_to_json(fjd.report) == eval_report_to_json(fjdk.report));
    CHECK(fjd.calibration.best_tau == fjdk.calibration.best_tau);
  }

  SUBCASE("same seeds give identical reports") {
    const ExperimentResult a =
        run_experiment(train, test, DetectorFamily::FJD, instruction, mock, protocol);
    const ExperimentResult b =
        run_experiment(train, test, DetectorFamily::FJD, instruction, mock, protocol);
    CHECK(eval_report_to_json(a.report) == eval_report_to_json(b.report));
  }

  SUBCASE("train/test overlap is leakage") {
    CHECK_THROWS_AS(
        run_experiment(train, train, DetectorFamily::FJD, instruction, mock, protocol),
        Error);
    try {
      run_experiment(train, train, DetectorFamily::FJD, instruction, mock, protocol);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::LeakageError);
    }
  }

  SUBCASE("ppl family runs end to end") {
    const ExperimentResult result =
        run_experiment(train, test, DetectorFamily::PPL, Instruction::none(), mock, protocol);
    CHECK(result.orientation == Orientation::HighScoreIsJailbreak);
    CHECK(result.report.auc.mean > 0.7);
    CHECK(result.report.auc_reversed.mean == doctest::Approx(1.0 - result.report.auc.mean));
  }

  SUBCASE("fjd-li requires the toy backend") {
    CHECK_THROWS_AS(
        run_experiment(train, test, DetectorFamily::FJDLI, instruction, mock, protocol),
        Error);
  }

  SUBCASE("ft pins tau at 1") {
    const ExperimentResult result =
        run_experiment(train, test, DetectorFamily::FT, instruction, mock, protocol);
    CHECK(result.calibration.best_tau == 1.0);
    CHECK(result.calibration.auc_curve.size() == 1);
  }
}

TEST_CASE("ablation emits the 2x2 grid with planted ordering") {
  MockProfile profile = planted_profile(21);
  profile.benign_sharpness = 5.5;
  profile.jailbreak_sharpness = 4.0;
  profile.instruction_boost = 2.5;
  profile.benign_tail_spread = 2.5;
  profile.jailbreak_tail_spread = 0.2;
  MockBackend mock(profile);

  const std::vector<PromptRecord> train = synthetic_records(60, 60, "train-");
  const std::vector<PromptRecord> test = synthetic_records(60, 60, "test-");
  const Instruction instruction{"good-assistant", "You are a good Assistant.",
                                Placement::Prefix, " "};
  ExperimentProtocol protocol;
  protocol.eval.seed = 2;

  const std::vector<AblationCell> cells =
      run_ablation(train, test, instruction, mock, protocol);
  REQUIRE(cells.size() == 4);

  const auto cell_auc = [&](bool ai, bool ts) {
    for (const AblationCell& cell : cells) {
      if (cell.affirmative_instruction == ai && cell.temperature_scaling == ts) {
        return cell.result.report.auc.mean;
      }
    }
    FAIL("missing cell");
    return 0.0;
  };

  // Instruction on beats instruction off within each scaling setting.
  CHECK(cell_auc(true, false) >= cell_auc(false, false));
  CHECK(cell_auc(true, true) >= cell_auc(false, true));
  // Calibrated scaling never hurts relative to tau=1 on the train side by
  // construction; on test it should hold for this planted scenario.
  CHECK(cell_auc(true, true) >= cell_auc(true, false) - 0.02);

  const std::string csv = ablation_csv(cells, "mock");
  CHECK(csv.find("ai,ts,") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 rows
}

TEST_CASE("manifest serialization and fingerprints") {
  RunManifest manifest;
  manifest.command = "evaluate";
  manifest.config_fingerprint = content_hash("config");
  manifest.backend_id = "mock";
  manifest.seed = 9;
  manifest.started_at = "2025-01-01T00:00:00Z";
  manifest.output_hash = content_hash("output");
  const std::string json = manifest_to_json(manifest);
  CHECK(json.find("\"command\"") != std::string::npos);
  CHECK(content_hash("config") == content_hash("config"));
  CHECK(content_hash("config") != content_hash("config2"));

  const std::filesystem::path path = temp_path("fjd_fingerprint_test.txt");
  {
    std::ofstream out(path, std::ios::trunc);
    out << "stable bytes";
  }
  CHECK(file_fingerprint(path) == file_fingerprint(path));
  std::filesystem::remove(path);
}
