#include "tableqa/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

#include <fmt/format.h>

#include "tableqa/agent.hpp"
#include "tableqa/text.hpp"

namespace tableqa::grpo {

void GrpoConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("grpo: epsilon must lie in (0, 1)");
  if (!(std_epsilon >= 0.0)) throw std::invalid_argument("grpo: std_epsilon must be non-negative");
}

void validate_group(const RolloutGroup& group) {
  if (group.episodes.size() < 2)
    throw std::invalid_argument(fmt::format("grpo: group '{}' has {} episodes, need at least 2", group.question_id,
                                            group.episodes.size()));
  for (std::size_t i = 0; i < group.episodes.size(); ++i) {
    const auto& ep = group.episodes[i];
    if (!std::isfinite(ep.reward)) throw std::invalid_argument(fmt::format("grpo: episode {} reward is not finite", i));
    bool any = false;
    for (const auto& s : ep.steps) {
      if (!std::isfinite(s.logp_new) || !std::isfinite(s.logp_old) || s.logp_new > 0.0 || s.logp_old > 0.0)
        throw std::invalid_argument(fmt::format("grpo: episode {} has a log-probability that is not finite and <= 0", i));
      any = any || s.action_mask;
    }
    if (!any) throw std::invalid_argument(fmt::format("grpo: episode {} has no masked-in steps", i));
  }
}

std::vector<double> normalize_advantages(const std::vector<double>& rewards, const GrpoConfig& cfg) {
  if (rewards.size() < 2) throw std::invalid_argument("grpo: advantages need at least 2 rewards");
  std::vector<double> adv(rewards.size(), 0.0);
  // Identical rewards must give exact zeros, which the rounded mean and
  // variance below would not guarantee.
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) return adv;
  auto n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  double sd = std::sqrt(var / n);
  if (sd == 0.0) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / (sd + cfg.std_epsilon);
  return adv;
}

double importance_ratio(const TokenStep& step) { return std::exp(step.logp_new - step.logp_old); }

namespace {

std::vector<double> group_advantages(const RolloutGroup& group, const GrpoConfig& cfg) {
  cfg.validate();
  validate_group(group);
  std::vector<double> rewards;
  rewards.reserve(group.episodes.size());
  for (const auto& ep : group.episodes) rewards.push_back(ep.reward);
  return normalize_advantages(rewards, cfg);
}

double normalizer(const RolloutGroup& group, const GrpoConfig& cfg) {
  if (!cfg.token_mean) return 1.0;
  std::size_t tokens = 0;
  for (const auto& ep : group.episodes)
    for (const auto& s : ep.steps) tokens += s.action_mask ? 1 : 0;
  return static_cast<double>(tokens);
}

}  // namespace

double grpo_loss(const RolloutGroup& group, const GrpoConfig& cfg) {
  auto adv = group_advantages(group, cfg);
  double lo = 1.0 - cfg.epsilon;
  double hi = 1.0 + cfg.epsilon;
  double total = 0.0;
  for (std::size_t i = 0; i < group.episodes.size(); ++i) {
    for (const auto& s : group.episodes[i].steps) {
      if (!s.action_mask) continue;
      double r = importance_ratio(s);
      total += std::min(r * adv[i], std::clamp(r, lo, hi) * adv[i]);
    }
  }
  return -total / normalizer(group, cfg);
}

std::vector<std::vector<double>> grpo_loss_grad(const RolloutGroup& group, const GrpoConfig& cfg) {
  auto adv = group_advantages(group, cfg);
  double lo = 1.0 - cfg.epsilon;
  double hi = 1.0 + cfg.epsilon;
  double norm = normalizer(group, cfg);
  std::vector<std::vector<double>> grads(group.episodes.size());
  for (std::size_t i = 0; i < group.episodes.size(); ++i) {
    const auto& steps = group.episodes[i].steps;
    grads[i].assign(steps.size(), 0.0);
    double a = adv[i];
    if (a == 0.0) continue;
    for (std::size_t t = 0; t < steps.size(); ++t) {
      if (!steps[t].action_mask) continue;
      double r = importance_ratio(steps[t]);
      bool unclipped = a > 0.0 ? r <= hi : r >= lo;
      if (unclipped) grads[i][t] = -a * r / norm;
    }
  }
  return grads;
}

double episode_reward(const EpisodeTranscript& transcript, const std::vector<std::string>& gold, double lambda_cost,
                      eval::MatchMode mode) {
  if (!(lambda_cost >= 0.0)) throw std::invalid_argument("reward: lambda_cost must be non-negative");
  double base = eval::exact_match(transcript.final_answer, gold, mode) ? 1.0 : 0.0;
  return base - lambda_cost * static_cast<double>(transcript.tool_calls.size());
}

Partition partition_simple_difficult(const std::vector<TeacherRecord>& records, eval::MatchMode mode) {
  Partition p;
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.question_id).second)
      throw std::invalid_argument("partition: duplicate question_id '" + r.question_id + "'");
    (eval::exact_match(r.teacher_answer, r.gold, mode) ? p.simple : p.difficult).push_back(r.question_id);
  }
  return p;
}

RolloutGroup rollout_group_from_json(const nlohmann::json& j) {
  RolloutGroup g;
  g.question_id = j.at("question_id").get<std::string>();
  for (const auto& e : j.at("episodes")) {
    RolloutEpisode ep;
    ep.reward = e.at("reward").get<double>();
    for (const auto& s : e.at("steps"))
      ep.steps.push_back({s.at("lp_new").get<double>(), s.at("lp_old").get<double>(), s.value("mask", true)});
    g.episodes.push_back(std::move(ep));
  }
  return g;
}

nlohmann::ordered_json rollout_group_to_json(const RolloutGroup& group) {
  nlohmann::ordered_json j;
  j["question_id"] = group.question_id;
  j["episodes"] = nlohmann::ordered_json::array();
  for (const auto& ep : group.episodes) {
    nlohmann::ordered_json e;
    e["reward"] = ep.reward;
    e["steps"] = nlohmann::ordered_json::array();
    for (const auto& s : ep.steps)
      e["steps"].push_back(nlohmann::ordered_json{{"lp_new", s.logp_new}, {"lp_old", s.logp_old}, {"mask", s.action_mask}});
    j["episodes"].push_back(std::move(e));
  }
  return j;
}

std::vector<RolloutGroup> read_rollouts(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open rollouts " + path.string());
  std::vector<RolloutGroup> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(rollout_group_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(fmt::format("rollouts line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

}  // namespace tableqa::grpo
