#include "tableqa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>

#include "tableqa/agent.hpp"
#include "tableqa/corpus.hpp"
#include "tableqa/text.hpp"

namespace tableqa::eval {

std::string_view to_string(MatchMode mode) { return mode == MatchMode::ordered ? "ordered" : "multiset"; }

std::optional<MatchMode> parse_match_mode(std::string_view name) {
  if (name == "ordered") return MatchMode::ordered;
  if (name == "multiset") return MatchMode::multiset;
  return std::nullopt;
}

std::vector<std::string> normalize_answer(const std::vector<std::string>& items, MatchMode mode) {
  std::vector<std::string> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    std::string canon;
    bool pending_space = false;
    for (char c : trim(item)) {
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
        pending_space = true;
        continue;
      }
      if (pending_space) canon.push_back(' ');
      pending_space = false;
      canon.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c);
    }
    out.push_back(std::move(canon));
  }
  if (mode == MatchMode::multiset) std::sort(out.begin(), out.end());
  return out;
}

bool exact_match(const std::optional<std::vector<std::string>>& predicted, const std::vector<std::string>& gold,
                 MatchMode mode) {
  if (!predicted) return false;
  return normalize_answer(*predicted, mode) == normalize_answer(gold, mode);
}

MetricsRow aggregate(const std::vector<EpisodeTranscript>& transcripts,
                     const std::vector<std::vector<std::string>>& golds, MatchMode mode, std::string label) {
  if (transcripts.empty()) throw std::invalid_argument("aggregate: no transcripts");
  if (transcripts.size() != golds.size())
    throw std::invalid_argument(fmt::format("aggregate: {} transcripts but {} gold answers", transcripts.size(), golds.size()));
  MetricsRow row;
  row.label = std::move(label);
  row.n = transcripts.size();
  std::int64_t tokens = 0;
  std::int64_t turns = 0;
  for (std::size_t i = 0; i < transcripts.size(); ++i) {
    if (exact_match(transcripts[i].final_answer, golds[i], mode)) ++row.matches;
    tokens += transcripts[i].total_tokens;
    turns += transcripts[i].turns;
  }
  auto n = static_cast<double>(row.n);
  row.accuracy = static_cast<double>(row.matches) / n;
  row.avg_tokens = static_cast<double>(tokens) / n;
  row.avg_turns = static_cast<double>(turns) / n;
  return row;
}

std::vector<std::vector<std::string>> golds_for(const std::vector<EpisodeTranscript>& transcripts,
                                                const std::vector<QaExample>& questions) {
  std::unordered_map<std::string, const QaExample*> by_id;
  for (const auto& q : questions) by_id.emplace(q.question_id, &q);
  std::vector<std::vector<std::string>> golds;
  golds.reserve(transcripts.size());
  for (const auto& t : transcripts) {
    auto it = by_id.find(t.question_id);
    if (it == by_id.end()) throw std::invalid_argument("no question with id '" + t.question_id + "'");
    golds.push_back(it->second->gold_answer);
  }
  return golds;
}

namespace {

std::string accuracy_cell(double accuracy) { return fmt::format("{:.1f}%", accuracy * 100.0); }
std::string tokens_cell(double tokens) { return with_thousands(std::llround(tokens)); }
std::string turns_cell(double turns) { return fmt::format("{:.1f}", turns); }

}  // namespace

std::string format_row(const MetricsRow& row) {
  return accuracy_cell(row.accuracy) + " / " + tokens_cell(row.avg_tokens) + " / " + turns_cell(row.avg_turns);
}

std::string report(const std::vector<MetricsRow>& rows) {
  std::size_t label_width = 5;
  for (const auto& r : rows) label_width = std::max(label_width, r.label.size());
  std::string out = fmt::format("{:<{}}  {:>8}  {:>10}  {:>9}\n", "Model", label_width, "Accuracy", "Avg. Token", "Avg. Turn");
  for (const auto& r : rows)
    out += fmt::format("{:<{}}  {:>8}  {:>10}  {:>9}\n", r.label, label_width, accuracy_cell(r.accuracy),
                       tokens_cell(r.avg_tokens), turns_cell(r.avg_turns));
  return out;
}

nlohmann::ordered_json summary_record(const MetricsRow& row, MatchMode mode) {
  nlohmann::ordered_json j;
  j["label"] = row.label;
  j["mode"] = std::string(to_string(mode));
  j["n"] = row.n;
  j["matches"] = row.matches;
  j["accuracy"] = row.accuracy;
  j["avg_tokens"] = row.avg_tokens;
  j["avg_turns"] = row.avg_turns;
  j["rendered"] = format_row(row);
  return j;
}

}  // namespace tableqa::eval
