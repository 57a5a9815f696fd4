#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tableqa/eval.hpp"

namespace tableqa {
struct EpisodeTranscript;
}

namespace tableqa::grpo {

/// Per-token log-probabilities under the current and the data-generating
/// policy. Masked-out tokens (prompt, tool output) never enter the loss.
struct TokenStep {
  double logp_new = 0.0;
  double logp_old = 0.0;
  bool action_mask = true;
};

struct RolloutEpisode {
  std::vector<TokenStep> steps;
  double reward = 0.0;
};

struct RolloutGroup {
  std::string question_id;
  std::vector<RolloutEpisode> episodes;
};

struct GrpoConfig {
  double epsilon = 0.2;
  double std_epsilon = 1e-8;
  /// Divide the loss (and gradients) by the number of masked-in tokens in the
  /// group. Off by default: the objective is the plain double sum.
  bool token_mean = false;

  void validate() const;
};

/// Throws std::invalid_argument unless the group has G >= 2 episodes, each
/// with at least one masked-in step, and every log-probability is finite and
/// <= 0.
void validate_group(const RolloutGroup& group);

/// (R_i - mean) / (population std + std_epsilon); exactly zero when the
/// rewards have zero spread.
std::vector<double> normalize_advantages(const std::vector<double>& rewards, const GrpoConfig& cfg = {});

double importance_ratio(const TokenStep& step);

/// -sum_i sum_t min(r_it * A_i, clip(r_it, 1 - eps, 1 + eps) * A_i) over
/// masked-in steps.
double grpo_loss(const RolloutGroup& group, const GrpoConfig& cfg = {});

/// d loss / d logp_new for every step (same shape as the group; masked-out
/// steps get 0). The unclipped branch is taken at the kink.
std::vector<std::vector<double>> grpo_loss_grad(const RolloutGroup& group, const GrpoConfig& cfg = {});

/// 1 for an exact match, 0 otherwise, minus lambda_cost per tool call.
double episode_reward(const EpisodeTranscript& transcript, const std::vector<std::string>& gold, double lambda_cost = 0.0,
                      eval::MatchMode mode = eval::MatchMode::multiset);

struct TeacherRecord {
  std::string question_id;
  std::optional<std::vector<std::string>> teacher_answer;
  std::vector<std::string> gold;
};

struct Partition {
  std::vector<std::string> simple;
  std::vector<std::string> difficult;
};

/// Simple iff the teacher's answer exactly matches gold. Throws
/// std::invalid_argument on a duplicate question_id.
Partition partition_simple_difficult(const std::vector<TeacherRecord>& records,
                                     eval::MatchMode mode = eval::MatchMode::multiset);

/// One group per line:
/// `{"question_id": str, "episodes": [{"reward": num, "steps": [{"lp_new": num, "lp_old": num, "mask": bool}]}]}`
RolloutGroup rollout_group_from_json(const nlohmann::json& j);
nlohmann::ordered_json rollout_group_to_json(const RolloutGroup& group);
std::vector<RolloutGroup> read_rollouts(const std::filesystem::path& path);

}  // namespace tableqa::grpo
