// One PASS/FAIL line per criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "support.hpp"
#include "tableqa/agent.hpp"
#include "tableqa/corpus.hpp"
#include "tableqa/eval.hpp"
#include "tableqa/sql_sandbox.hpp"
#include "tableqa/tools.hpp"

using namespace tableqa;

namespace {

constexpr double kScoreTolerance = 1e-9;
constexpr double kGradTolerance = 1e-6;
constexpr double kFiniteDiffStep = 1e-6;
constexpr double kMeanTolerance = 1e-12;
// Ratio-1 loss is the mean advantage, so it inherits the rounding of the sum.
constexpr double kRatioOneLossTolerance = 1e-12;
// ln(1.5) and ln(0.5) round, so the hand case is -0.4 to a few ulps.
constexpr double kHandCaseTolerance = 1e-15;
constexpr double kStdTolerance = 1e-9;
constexpr double kTimeoutFactor = 2.0;
constexpr auto kSandboxTimeout = std::chrono::milliseconds(1000);

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& body) {
  auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::cout << fmt::format("{} {:<24} {} ({:.2f}s)", o.pass ? "PASS" : "FAIL", name, o.detail, secs) << std::endl;
}

Outcome retrieval_oracle() {
  std::mt19937_64 rng(20240601);
  const std::vector<std::string> vocab = {"red", "green", "blue", "cyan", "gold", "ash", "oak", "elm", "fir", "yew", "ivy"};
  double worst = 0.0;
  for (int round = 0; round < 100; ++round) {
    int n = std::uniform_int_distribution<int>(1, 20)(rng);
    std::vector<std::pair<std::string, std::string>> docs;
    for (int d = 0; d < n; ++d) {
      std::string text;
      for (int i = 0, l = std::uniform_int_distribution<int>(0, 25)(rng); i < l; ++i)
        text += (i ? " " : "") + testing::random_word(rng, vocab);
      docs.emplace_back(fmt::format("d{:02}", d), text);
    }
    std::string query;
    for (int i = 0, l = std::uniform_int_distribution<int>(1, 5)(rng); i < l; ++i) query += " " + testing::random_word(rng, vocab);
    Bm25Index idx(docs);
    auto got = idx.search(query, 20);
    auto want = testing::brute_force_bm25(docs, query, {}, 20);
    if (got.size() != want.size()) return {false, fmt::format("corpus {}: {} hits vs {}", round, got.size(), want.size())};
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (got[i].table_id != want[i].id) return {false, fmt::format("corpus {}: rank {} differs", round, i)};
      worst = std::max(worst, std::abs(got[i].score - static_cast<double>(want[i].score)));
    }
  }
  return {worst < kScoreTolerance, fmt::format("100 corpora, max score error {:.3g}", worst)};
}

grpo::RolloutGroup one_token_group(std::vector<double> rewards, std::vector<double> ratios) {
  grpo::RolloutGroup g{"q", {}};
  for (std::size_t i = 0; i < rewards.size(); ++i) g.episodes.push_back({{{std::log(ratios[i]) - 1.0, -1.0, true}}, rewards[i]});
  return g;
}

Outcome grpo_identities() {
  grpo::GrpoConfig exact;
  exact.std_epsilon = 0.0;
  std::mt19937_64 rng(8);
  for (int round = 0; round < 100; ++round) {
    auto g = testing::random_group(rng, 2 + rng() % 6, exact.epsilon, 0.0, 0.0);
    for (auto& e : g.episodes) e.reward = 0.7;
    if (grpo::grpo_loss(g) != 0.0) return {false, "zero-variance group has nonzero loss"};
    auto h = testing::random_group(rng, 2 + rng() % 6, exact.epsilon, 0.0, 0.0);
    std::size_t len = h.episodes[0].steps.size();
    for (auto& e : h.episodes) {
      e.steps.resize(len, e.steps[0]);
      for (auto& s : e.steps) s.logp_new = s.logp_old;
    }
    if (std::abs(grpo::grpo_loss(h)) > kRatioOneLossTolerance) return {false, fmt::format("all-ratio-1 group has loss {:.3g}", grpo::grpo_loss(h))};
  }
  double hand = grpo::grpo_loss(one_token_group({1, 0}, {1.5, 0.5}), exact);
  return {std::abs(hand + 0.4) < kHandCaseTolerance, fmt::format("hand case loss {:.17g}", hand)};
}

Outcome gradient_check() {
  std::mt19937_64 rng(777);
  double worst = 0.0;
  for (int round = 0; round < 200; ++round) {
    grpo::GrpoConfig cfg;
    cfg.token_mean = round % 2 == 1;
    auto g = testing::random_group(rng, 2 + rng() % 7, cfg.epsilon, 1e-3);
    auto grad = grpo::grpo_loss_grad(g, cfg);
    for (std::size_t i = 0; i < g.episodes.size(); ++i)
      for (std::size_t t = 0; t < g.episodes[i].steps.size(); ++t) {
        auto plus = g, minus = g;
        plus.episodes[i].steps[t].logp_new += kFiniteDiffStep;
        minus.episodes[i].steps[t].logp_new -= kFiniteDiffStep;
        double fd = (grpo::grpo_loss(plus, cfg) - grpo::grpo_loss(minus, cfg)) / (2 * kFiniteDiffStep);
        double scale = std::max({1.0, std::abs(fd), std::abs(grad[i][t])});
        worst = std::max(worst, std::abs(fd - grad[i][t]) / scale);
      }
  }
  return {worst <= kGradTolerance, fmt::format("200 groups, max relative error {:.3g}", worst)};
}

Outcome advantage_normalization() {
  grpo::GrpoConfig cfg;
  cfg.std_epsilon = 0.0;
  std::mt19937_64 rng(55);
  double worst_mean = 0.0, worst_std = 0.0;
  for (int round = 0; round < 1000; ++round) {
    std::vector<double> r(2 + rng() % 15);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (auto& x : r) x = u(rng);
    auto a = grpo::normalize_advantages(r, cfg);
    long double mean = 0, var = 0;
    for (double x : a) mean += x;
    mean /= static_cast<long double>(a.size());
    for (double x : a) var += (x - mean) * (x - mean);
    worst_mean = std::max(worst_mean, std::abs(static_cast<double>(mean)));
    worst_std = std::max(worst_std, std::abs(std::sqrt(static_cast<double>(var / static_cast<long double>(a.size()))) - 1.0));
  }
  return {worst_mean < kMeanTolerance && worst_std < kStdTolerance,
          fmt::format("1000 groups, max |mean| {:.3g}, max |std-1| {:.3g}", worst_mean, worst_std)};
}

Outcome protocol_round_trip() {
  std::mt19937_64 rng(4096);
  int multiline = 0;
  for (int i = 0; i < 1000; ++i) {
    auto req = testing::random_tool_call(rng);
    if (i % 4 == 0) {
      req.name = "code_interpreter";
      req.code_block = "SELECT a,\n  b -- </code>\nFROM t\nWHERE x = '</tool_call>'";
      req.arguments = nlohmann::json{{"code", *req.code_block}};
    }
    if (req.code_block && req.code_block->find('\n') != std::string::npos) ++multiline;
    auto turn = protocol::parse_assistant_message(protocol::serialize_tool_call(req));
    if (!turn.diagnostics.empty() || turn.tool_calls.size() != 1 || !(turn.tool_calls[0] == req))
      return {false, fmt::format("round trip {} failed", i)};
  }
  for (int i = 0; i < 10000; ++i) {
    std::string s = testing::random_tagged_text(rng, 60);
    if (i % 2 == 0)
      for (auto& c : s)
        if (rng() % 5 == 0) c = static_cast<char>(rng() % 256);
    try {
      protocol::parse_assistant_message(s);
    } catch (const std::exception& e) {
      return {false, fmt::format("fuzz string {} threw: {}", i, e.what())};
    }
  }
  return {true, fmt::format("1000 round trips ({} multi-line code), 10000 fuzz strings", multiline)};
}

Outcome sandbox_safety() {
  auto corpus = CorpusHandle::ingest(testing::data_path("fixture_tables.jsonl"));
  auto digest = corpus.content_digest();
  const std::vector<std::string> forbidden = {
      "DROP TABLE olympics_hosts", "CREATE TABLE x (a)", "ALTER TABLE olympics_hosts RENAME TO y",
      "CREATE INDEX i ON olympics_hosts(year)", "DELETE FROM olympics_hosts", "UPDATE olympics_hosts SET year = '0'",
      "INSERT INTO olympics_hosts VALUES ('1','2','3')", "REPLACE INTO olympics_hosts VALUES ('1','2','3')",
      "SELECT 1; DROP TABLE olympics_hosts", "SELECT 1; SELECT 2", "ATTACH DATABASE ':memory:' AS m",
      "PRAGMA writable_schema = 1", "VACUUM", "BEGIN; DELETE FROM olympics_hosts; COMMIT",
      "WITH x AS (SELECT 1) DELETE FROM olympics_hosts", "SELECT load_extension('x')",
      "CREATE TEMP TABLE t AS SELECT * FROM olympics_hosts", "DETACH DATABASE main"};
  for (const auto& sql : forbidden) {
    auto r = execute_sql(corpus, {sql});
    if (r.ok) return {false, "accepted: " + sql};
  }
  SandboxLimits lim;
  lim.timeout = kSandboxTimeout;
  auto start = std::chrono::steady_clock::now();
  auto slow = execute_sql(corpus, {"WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT count(*) FROM c"}, lim);
  auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  double limit = std::chrono::duration<double>(kSandboxTimeout).count();
  if (slow.ok || slow.payload != kTimeoutError) return {false, "long-running query was not stopped: " + slow.payload};
  if (corpus.content_digest() != digest) return {false, "corpus digest changed"};
  if (!execute_sql(corpus, {"SELECT count(*) FROM olympics_hosts"}).ok) return {false, "corpus unreadable afterwards"};
  return {elapsed < kTimeoutFactor * limit,
          fmt::format("{} forbidden statements rejected, digest unchanged, timeout after {:.3f}s (limit {:.1f}s)",
                      forbidden.size(), elapsed, limit)};
}

Outcome end_to_end() {
  auto corpus = CorpusHandle::ingest(testing::data_path("fixture_tables.jsonl"));
  auto index = build_corpus_index(corpus);
  LocalTools tools(corpus, index);
  auto qa = load_qa_examples(testing::data_path("fixture_qa.jsonl"));
  std::vector<QaExample> test;
  for (const auto& q : qa)
    if (q.split == Split::test) test.push_back(q);
  EpisodeConfig cfg;
  cfg.retry_backoff = std::chrono::milliseconds(0);
  auto serialize = [&](int parallelism) {
    auto ep = ScriptedEndpoint::from_file(testing::data_path("fixture_mock.jsonl"));
    auto ts = run_batch(test, ep, tools, cfg, parallelism);
    std::string bytes;
    for (const auto& t : ts) bytes += transcript_to_json(t).dump() + "\n";
    return std::make_pair(ts, bytes);
  };
  auto [first, bytes1] = serialize(4);
  auto [second, bytes2] = serialize(4);
  auto row = eval::aggregate(first, eval::golds_for(first, qa));
  bool identical = bytes1 == bytes2;
  return {test.size() == 10 && row.matches == 10 && identical,
          fmt::format("{} questions, EM {:.1f}%, transcripts {}", test.size(), 100.0 * row.accuracy,
                      identical ? "byte-identical" : "differ")};
}

Outcome scheduler() {
  using namespace tableqa::sim;
  std::mt19937_64 rng(2718);
  for (int round = 0; round < 50; ++round) {
    auto c = testing::random_sim_config(rng);
    for (const auto& t : {simulate_plain(c), simulate_async(c)}) {
      auto problems = check_trace_invariants(t);
      if (!problems.empty()) return {false, fmt::format("config {}: {}", round, problems.front())};
    }
    if (!(simulate_plain(c) == simulate_plain(c)) || export_trace_jsonl(simulate_async(c)) != export_trace_jsonl(simulate_async(c)))
      return {false, fmt::format("config {}: traces differ between runs", round)};
  }
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 1; s <= 20; ++s) seeds.push_back(s);
  SimConfig def;
  if (!(simulate_async(def) == simulate_async(def))) return {false, "default config traces differ between runs"};
  auto report = compare(def, seeds);
  std::vector<std::uint64_t> violations;
  for (const auto& row : report.rows)
    if (row.async.straggler_idle > row.plain.straggler_idle) violations.push_back(row.seed);
  std::string means = fmt::format("mean straggler idle plain {:.3f}, async {:.3f}", report.mean_plain_straggler(),
                                  report.mean_async_straggler());
  if (violations.empty())
    return {true, fmt::format("50 random configs sound and deterministic; async <= plain on all 20 seeds; {}", means)};
  std::string seeds_text;
  for (auto s : violations) seeds_text += (seeds_text.empty() ? "" : ",") + std::to_string(s);
  return {report.mean_async_straggler() < report.mean_plain_straggler(),
          fmt::format("async > plain on seeds {}; falling back to the mean: {}", seeds_text, means)};
}

Outcome metrics_golden() {
  auto zero = testing::synthetic_set(1024, 123, 11997LL * 1024, 54170, 1);
  auto tuned = testing::synthetic_set(1024, 883, 2690LL * 1024, 6963, 3);
  auto a = eval::format_row(eval::aggregate(zero.transcripts, zero.golds));
  auto b = eval::format_row(eval::aggregate(tuned.transcripts, tuned.golds));
  return {a == "12.0% / 11,997 / 52.9" && b == "86.2% / 2,690 / 6.8", "\"" + a + "\", \"" + b + "\""};
}

}  // namespace

int main() {
  criterion("retrieval-oracle", retrieval_oracle);
  criterion("grpo-identities", grpo_identities);
  criterion("gradient-check", gradient_check);
  criterion("advantage-normalization", advantage_normalization);
  criterion("protocol-round-trip", protocol_round_trip);
  criterion("sandbox-safety", sandbox_safety);
  criterion("end-to-end-fixture", end_to_end);
  criterion("scheduler", scheduler);
  criterion("metrics-golden", metrics_golden);
  std::cout << (failures == 0 ? "all criteria passed" : fmt::format("{} criteria failed", failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}
