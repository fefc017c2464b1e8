#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fjd/backend.hpp"

namespace fjd {

// One stored scoring result. The id is an opaque key: hand-written files use
// prompt ids, captured caches use content hashes.
struct ReplayRecord {
  std::string id;
  std::vector<TokenDistribution> positions;
  std::optional<std::vector<double>> input_logprobs;
};

// Line format: {"id": ..., "positions": [{"kind":"full","logits":[...]} |
// {"kind":"topk","logprobs":{token: lp}}], "input_logprobs": [...]?}.
// nlohmann round-trips doubles exactly, so capture -> replay is bit-exact.
std::string replay_record_to_json(const ReplayRecord& record);
ReplayRecord replay_record_from_json(const std::string& line, const std::string& context);

// Content key for a scoring call; used by the cache and by captured replays.
std::string replay_key(const AssembledPrompt& prompt, int positions);

// Serves stored records. Lookup tries the content key of the request first,
// then the request metadata "id"; a miss on both is a missing-record error.
class ReplayBackend : public Backend {
 public:
  explicit ReplayBackend(const std::filesystem::path& path);

  std::string id() const override;
  BackendResponse score(const BackendRequest& request) override;
  std::optional<std::vector<double>> input_logprobs(const BackendRequest& request) override;

  std::size_t record_count() const { return records_.size(); }

 private:
  const ReplayRecord& find(const BackendRequest& request) const;

  std::map<std::string, ReplayRecord> records_;
  std::string source_;
};

// Appends records to a replay file, creating parent directories on demand.
class ReplayWriter {
 public:
  explicit ReplayWriter(std::filesystem::path path);

  void append(const ReplayRecord& record);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fjd
