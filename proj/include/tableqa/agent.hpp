#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tableqa/corpus.hpp"
#include "tableqa/endpoint.hpp"
#include "tableqa/tools.hpp"

namespace tableqa {

struct EpisodeConfig {
  std::int64_t context_window = 16384;
  int max_turns = 0;  // 0 = unlimited
  int default_top_k = kDefaultTopK;
  int malformed_budget = 3;
  int max_completion_tokens = 2048;
  std::string model = "qwen3";
  double temperature = 0.0;
  int endpoint_retries = 2;
  std::chrono::milliseconds retry_backoff{250};

  void validate() const;
};

enum class Termination { answered, turn_cap, context_exhausted, malformed, endpoint_error };

std::string_view to_string(Termination t);
std::optional<Termination> parse_termination(std::string_view name);

class TokenCounter {
 public:
  virtual ~TokenCounter() = default;
  virtual std::int64_t count(std::string_view text) const = 0;
};

/// count_word_pieces(): words plus punctuation runs, whitespace free.
class WordPieceCounter : public TokenCounter {
 public:
  std::int64_t count(std::string_view text) const override;
};

const TokenCounter& default_token_counter();

std::int64_t count_tokens(std::string_view text, const TokenCounter& counter = default_token_counter());

struct TranscriptMessage {
  std::string role;
  std::string content;
  std::int64_t tokens = 0;

  bool operator==(const TranscriptMessage&) const = default;
};

struct ToolCallLogEntry {
  int turn = 0;
  std::string name;
  nlohmann::json arguments;
  bool ok = false;
  std::size_t rows_returned = 0;
  bool truncated = false;
  /// False when the tool message was withheld because it would have
  /// overflowed the context window.
  bool delivered = true;

  bool operator==(const ToolCallLogEntry&) const = default;
};

struct EndpointCallLog {
  int turn = 0;
  int attempts = 0;
  std::optional<Usage> usage;

  bool operator==(const EndpointCallLog&) const = default;
};

/// Token accounting: total_tokens = template_tokens + completion_tokens +
/// tool_tokens. template_tokens is the first response's reported
/// prompt_tokens when the endpoint reports usage, else the counter's value
/// for the system and user messages.
struct EpisodeTranscript {
  std::string question_id;
  std::vector<TranscriptMessage> messages;
  std::vector<ToolCallLogEntry> tool_calls;
  std::vector<EndpointCallLog> endpoint_calls;
  std::optional<std::vector<std::string>> final_answer;
  Termination termination = Termination::endpoint_error;
  int turns = 0;
  std::int64_t template_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t tool_tokens = 0;
  std::int64_t total_tokens = 0;
  std::string error;

  bool operator==(const EpisodeTranscript&) const = default;
};

/// Runs one question to termination. Tool failures are fed back to the model;
/// only endpoint transport failures (after retries) end an episode early.
EpisodeTranscript run_episode(const QaExample& question, LlmEndpoint& endpoint, const ToolDispatcher& tools,
                              const EpisodeConfig& cfg, const TokenCounter& counter = default_token_counter());

/// Runs episodes on `parallelism` worker threads; output order follows input.
std::vector<EpisodeTranscript> run_batch(const std::vector<QaExample>& questions, LlmEndpoint& endpoint,
                                         const ToolDispatcher& tools, const EpisodeConfig& cfg, int parallelism,
                                         const TokenCounter& counter = default_token_counter());

nlohmann::ordered_json transcript_to_json(const EpisodeTranscript& t);
EpisodeTranscript transcript_from_json(const nlohmann::json& j);

/// One transcript per line, deterministic bytes for identical transcripts.
void write_transcripts(const std::filesystem::path& path, const std::vector<EpisodeTranscript>& transcripts);
std::vector<EpisodeTranscript> read_transcripts(const std::filesystem::path& path);

/// Seeded Fisher-Yates shuffle over lexicographically sorted question ids,
/// keeping the first `n`. Uses mt19937_64 and its own bounded draw so the
/// subset is the same on every platform.
std::vector<QaExample> sample_questions(std::vector<QaExample> questions, std::size_t n, std::uint64_t seed);

}  // namespace tableqa
