#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tableqa/agent.hpp"
#include "tableqa/grpo.hpp"
#include "tableqa/protocol.hpp"
#include "tableqa/sched_sim.hpp"
#include "tableqa/retrieval.hpp"
#include "tableqa/text.hpp"

namespace testing {

inline std::filesystem::path data_path(const std::string& name) { return std::filesystem::path(TABLEQA_DATA_DIR) / name; }
inline std::filesystem::path golden_path(const std::string& name) {
  return std::filesystem::path(TABLEQA_GOLDEN_DIR) / name;
}

class TempDir {
 public:
  TempDir() {
    static std::uint64_t counter = 0;
    auto base = std::filesystem::temp_directory_path();
    std::random_device rd;
    path_ = base / ("tableqa-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Straight-from-the-definition BM25+ in long double: recounts df and tf by
// scanning every document for every query term, no inverted index.
struct BruteHit {
  std::string id;
  long double score;
};

inline std::vector<BruteHit> brute_force_bm25(const std::vector<std::pair<std::string, std::string>>& docs,
                                              const std::string& query, const tableqa::Bm25Params& p,
                                              std::size_t top_k) {
  std::vector<std::vector<std::string>> toks;
  long double total_len = 0;
  for (const auto& d : docs) {
    toks.push_back(tableqa::tokenize(d.second));
    total_len += static_cast<long double>(toks.back().size());
  }
  const long double n = static_cast<long double>(docs.size());
  const long double avgdl = docs.empty() ? 0.0L : total_len / n;
  auto q = tableqa::tokenize(query);
  std::sort(q.begin(), q.end());
  q.erase(std::unique(q.begin(), q.end()), q.end());

  std::vector<BruteHit> hits;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    long double s = 0.0L;
    bool matched = false;
    for (const auto& term : q) {
      long double df = 0;
      for (const auto& t : toks) df += std::count(t.begin(), t.end(), term) > 0 ? 1 : 0;
      auto tf = static_cast<long double>(std::count(toks[i].begin(), toks[i].end(), term));
      if (tf == 0) continue;
      matched = true;
      long double idf = std::log((n - df + 0.5L) / (df + 0.5L) + 1.0L);
      long double dl = static_cast<long double>(toks[i].size());
      long double k1 = p.k1, b = p.b;
      s += idf * ((tf * (k1 + 1.0L)) / (tf + k1 * (1.0L - b + b * dl / avgdl)) + static_cast<long double>(p.delta));
    }
    if (matched && s > 0) hits.push_back({docs[i].first, s});
  }
  std::sort(hits.begin(), hits.end(), [](const BruteHit& a, const BruteHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  if (hits.size() > top_k) hits.resize(top_k);
  return hits;
}

inline std::string random_word(std::mt19937_64& rng, const std::vector<std::string>& vocab) {
  return vocab[std::uniform_int_distribution<std::size_t>(0, vocab.size() - 1)(rng)];
}

// Random text over an alphabet heavy in protocol metacharacters, so tags,
// near-tags and backslash runs show up often.
inline std::string random_tagged_text(std::mt19937_64& rng, std::size_t max_len) {
  static const std::vector<std::string> pieces = {
      "<", ">", "/", "\\", "\n", " ", "a", "Z", "7", "\"", "{", "}", ",", ";", "'", "\t", "\r",
      "</code>", "<code>", "</tool_call>", "<tool_call>", "<answer>", "</answer>", "</tool_response>",
      "<\\/", "SELECT", "\xC3\xA9", "\xE2\x80\xA6"};
  std::string out;
  auto n = std::uniform_int_distribution<std::size_t>(0, max_len)(rng);
  for (std::size_t i = 0; i < n; ++i) out += random_word(rng, pieces);
  return out;
}

inline nlohmann::json random_json_value(std::mt19937_64& rng, int depth) {
  switch (std::uniform_int_distribution<int>(0, depth > 0 ? 6 : 4)(rng)) {
    case 0: return nullptr;
    case 1: return rng() % 2 == 0;
    case 2: return static_cast<std::int64_t>(rng() % 2000) - 1000;
    case 3: return std::uniform_real_distribution<double>(-1e6, 1e6)(rng);
    case 4: return random_tagged_text(rng, 6);
    case 5: {
      auto a = nlohmann::json::array();
      for (int i = 0, n = static_cast<int>(rng() % 3); i < n; ++i) a.push_back(random_json_value(rng, depth - 1));
      return a;
    }
    default: {
      auto o = nlohmann::json::object();
      for (int i = 0, n = static_cast<int>(rng() % 3); i < n; ++i)
        o[random_tagged_text(rng, 3)] = random_json_value(rng, depth - 1);
      return o;
    }
  }
}

// Requests satisfy the placeholder invariant: with a code block present,
// arguments["code"] holds it verbatim.
inline tableqa::protocol::ToolCallRequest random_tool_call(std::mt19937_64& rng) {
  tableqa::protocol::ToolCallRequest r;
  static const std::vector<std::string> names = {"search", "code_interpreter", "x", "<weird>/name"};
  r.name = random_word(rng, names);
  for (int i = 0, n = static_cast<int>(rng() % 4); i < n; ++i) r.arguments[random_tagged_text(rng, 3)] = random_json_value(rng, 2);
  if (rng() % 2) {
    r.code_block = random_tagged_text(rng, 20);
    r.arguments["code"] = *r.code_block;
  }
  return r;
}

// n transcripts of which the first `matches` answer correctly, with total
// tokens and turns spread unevenly but summing exactly to the given totals,
// then shuffled together with their golds.
struct SyntheticSet {
  std::vector<tableqa::EpisodeTranscript> transcripts;
  std::vector<std::vector<std::string>> golds;
};

inline SyntheticSet synthetic_set(std::size_t n, std::size_t matches, std::int64_t total_tokens, std::int64_t total_turns,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto spread = [&](std::int64_t total) {
    std::vector<std::int64_t> v(n, total / static_cast<std::int64_t>(n));
    for (std::int64_t r = total % static_cast<std::int64_t>(n); r > 0; --r) ++v[static_cast<std::size_t>(r - 1)];
    for (std::size_t k = 0; k < n; ++k) {
      auto i = rng() % n, j = rng() % n;
      auto move = static_cast<std::int64_t>(rng() % 5);
      if (v[i] - move >= 1) v[i] -= move, v[j] += move;
    }
    return v;
  };
  auto tokens = spread(total_tokens);
  auto turns = spread(total_turns);
  SyntheticSet out;
  for (std::size_t i = 0; i < n; ++i) {
    tableqa::EpisodeTranscript t;
    t.question_id = "s" + std::to_string(i);
    t.turns = static_cast<int>(turns[i]);
    t.total_tokens = tokens[i];
    t.template_tokens = tokens[i];
    std::vector<std::string> gold = {"Item " + std::to_string(i), "Other"};
    if (i < matches) {
      t.final_answer = std::vector<std::string>{"other", " item  " + std::to_string(i)};
      t.termination = tableqa::Termination::answered;
    } else if (i % 2) {
      t.final_answer = std::vector<std::string>{"wrong"};
      t.termination = tableqa::Termination::answered;
    } else {
      t.termination = tableqa::Termination::context_exhausted;
    }
    out.transcripts.push_back(std::move(t));
    out.golds.push_back(std::move(gold));
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  SyntheticSet shuffled;
  for (auto i : perm) {
    shuffled.transcripts.push_back(out.transcripts[i]);
    shuffled.golds.push_back(out.golds[i]);
  }
  return shuffled;
}

// Random rollout group whose ratios stay at least `kink_gap` away from
// 1 - eps and 1 + eps. Log-probabilities stay below -0.5 so a small
// perturbation keeps them valid.
inline tableqa::grpo::RolloutGroup random_group(std::mt19937_64& rng, std::size_t g, double eps, double kink_gap,
                                               double mask_out_rate = 0.2) {
  tableqa::grpo::RolloutGroup group;
  group.question_id = "g";
  std::uniform_real_distribution<double> old_lp(-6.0, -1.5), ratio(0.3, 2.5), reward(-1.0, 2.0), u(0.0, 1.0);
  for (std::size_t i = 0; i < g; ++i) {
    tableqa::grpo::RolloutEpisode ep;
    ep.reward = reward(rng);
    auto len = 1 + rng() % 12;
    for (std::size_t t = 0; t < len; ++t) {
      double r;
      do r = ratio(rng);
      while (std::abs(r - (1.0 - eps)) < kink_gap || std::abs(r - (1.0 + eps)) < kink_gap);
      double lo = old_lp(rng);
      ep.steps.push_back({lo + std::log(r), lo, t == 0 || u(rng) >= mask_out_rate});
    }
    group.episodes.push_back(std::move(ep));
  }
  return group;
}

inline tableqa::sim::SimConfig random_sim_config(std::mt19937_64& rng) {
  using namespace tableqa::sim;
  SimConfig c;
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::uniform_real_distribution<double> dur(0.05, 5.0);
  c.num_engines = pick(1, 12);
  c.training_batch = pick(1, 8);
  c.rollout_batch = c.training_batch * pick(1, 6);
  c.buffer_size = pick(1, c.rollout_batch * 3 / 2 + 1);
  c.num_cycles = pick(1, 4);
  c.train_step_time = dur(rng);
  c.sync_time = dur(rng);
  c.strict_barrier = pick(0, 3) == 0;
  c.seed = rng();
  switch (pick(0, 3)) {
    case 0: c.gen_time.family = GenDistribution::constant, c.gen_time.constant = dur(rng); break;
    case 1: {
      c.gen_time.family = GenDistribution::uniform;
      double a = dur(rng), b = dur(rng);
      c.gen_time.low = std::min(a, b), c.gen_time.high = std::max(a, b);
      break;
    }
    case 2: c.gen_time.family = GenDistribution::exponential, c.gen_time.mean = dur(rng); break;
    default:
      c.gen_time.family = GenDistribution::lognormal;
      c.gen_time.log_mu = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
      c.gen_time.log_sigma = std::uniform_real_distribution<double>(0.0, 1.5)(rng);
  }
  return c;
}

}  // namespace testing
