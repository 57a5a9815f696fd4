#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tableqa/agent.hpp"
#include "tableqa/retrieval.hpp"
#include "tableqa/service.hpp"
#include "tableqa/sql_sandbox.hpp"

namespace tableqa::cli {

/// Everything `run` needs to reproduce a batch of episodes. Serialized into
/// the run manifest and read back by `replay`.
struct RunOptions {
  std::filesystem::path db;
  std::filesystem::path qa;
  std::string split = "test";
  std::size_t sample = 0;  // 0 = the whole split
  std::uint64_t seed = 0;
  int parallelism = 4;
  std::filesystem::path out = "transcripts.jsonl";
  std::string endpoint;             // chat-completions URL
  std::filesystem::path mock;       // scripted responses instead of an endpoint
  std::string api_key;              // never written to the manifest
  std::string tools_url;            // empty = in-process tools
  EpisodeConfig episode;
  SandboxLimits limits;
  Bm25Params bm25;
};

nlohmann::ordered_json run_options_to_json(const RunOptions& o);
RunOptions run_options_from_json(const nlohmann::ordered_json& j);

/// Applies a `key = value` settings file (episode, sandbox, index and server
/// keys) onto the given structs; `server` may be null.
void apply_settings(std::string_view text, EpisodeConfig& episode, SandboxLimits& limits, Bm25Params& bm25,
                    ServerConfig* server);

/// "1..20", "7", "1,4,9" or mixtures such as "1..3,10".
std::vector<std::uint64_t> parse_seed_list(std::string_view text);

struct RunOutcome {
  RunManifest manifest;
  std::vector<EpisodeTranscript> transcripts;
};

/// Runs the episodes, writes transcripts to `o.out`, and returns the manifest
/// (not yet written).
RunOutcome execute_run(const RunOptions& o, std::ostream& log);

/// Exit status: 0 on success, 1 on a runtime failure, 2 on a usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tableqa::cli
