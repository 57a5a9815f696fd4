#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace tableqa {
struct EpisodeTranscript;
struct QaExample;
}  // namespace tableqa

namespace tableqa::eval {

enum class MatchMode { ordered, multiset };

std::string_view to_string(MatchMode mode);
std::optional<MatchMode> parse_match_mode(std::string_view name);

/// Trims each item, collapses inner whitespace runs to one space and
/// lowercases ASCII; multiset mode also sorts the items.
std::vector<std::string> normalize_answer(const std::vector<std::string>& items, MatchMode mode);

bool exact_match(const std::optional<std::vector<std::string>>& predicted, const std::vector<std::string>& gold,
                 MatchMode mode = MatchMode::multiset);

struct MetricsRow {
  std::string label;
  double accuracy = 0.0;
  double avg_tokens = 0.0;
  double avg_turns = 0.0;
  std::size_t n = 0;
  std::size_t matches = 0;
};

/// `golds[i]` is the reference for `transcripts[i]`. Throws
/// std::invalid_argument on empty input or a length mismatch.
MetricsRow aggregate(const std::vector<EpisodeTranscript>& transcripts,
                     const std::vector<std::vector<std::string>>& golds, MatchMode mode = MatchMode::multiset,
                     std::string label = {});

/// Pairs transcripts with questions by question_id. Throws when a transcript
/// has no matching question.
std::vector<std::vector<std::string>> golds_for(const std::vector<EpisodeTranscript>& transcripts,
                                                const std::vector<QaExample>& questions);

/// "86.2% / 2,690 / 6.8": accuracy to 0.1 pp, tokens to an integer with
/// thousands separators, turns to 0.1.
std::string format_row(const MetricsRow& row);

/// Fixed-width table with the columns Model, Accuracy, Avg. Token, Avg. Turn.
std::string report(const std::vector<MetricsRow>& rows);

nlohmann::ordered_json summary_record(const MetricsRow& row, MatchMode mode);

}  // namespace tableqa::eval
