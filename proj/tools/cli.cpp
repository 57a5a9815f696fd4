#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <memory>
#include <ostream>
#include <stdexcept>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "tableqa/config.hpp"
#include "tableqa/corpus.hpp"
#include "tableqa/eval.hpp"
#include "tableqa/grpo.hpp"
#include "tableqa/protocol.hpp"
#include "tableqa/sched_sim.hpp"
#include "tableqa/text.hpp"
#include "tableqa/tools.hpp"

namespace tableqa::cli {

using ojson = nlohmann::ordered_json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

ojson episode_to_json(const EpisodeConfig& e) {
  ojson j;
  j["context_window"] = e.context_window;
  j["max_turns"] = e.max_turns;
  j["default_top_k"] = e.default_top_k;
  j["malformed_budget"] = e.malformed_budget;
  j["max_completion_tokens"] = e.max_completion_tokens;
  j["model"] = e.model;
  j["temperature"] = e.temperature;
  j["endpoint_retries"] = e.endpoint_retries;
  j["retry_backoff_ms"] = e.retry_backoff.count();
  return j;
}

EpisodeConfig episode_from_json(const ojson& j) {
  EpisodeConfig e;
  e.context_window = j.at("context_window").get<std::int64_t>();
  e.max_turns = j.at("max_turns").get<int>();
  e.default_top_k = j.at("default_top_k").get<int>();
  e.malformed_budget = j.at("malformed_budget").get<int>();
  e.max_completion_tokens = j.at("max_completion_tokens").get<int>();
  e.model = j.at("model").get<std::string>();
  e.temperature = j.at("temperature").get<double>();
  e.endpoint_retries = j.at("endpoint_retries").get<int>();
  e.retry_backoff = std::chrono::milliseconds(j.at("retry_backoff_ms").get<std::int64_t>());
  return e;
}

std::size_t positive_size(const KeyValue& kv) {
  auto v = kv_int(kv);
  if (v < 1) throw std::invalid_argument(fmt::format("line {}: '{}' must be positive", kv.line, kv.key));
  return static_cast<std::size_t>(v);
}

int as_int(const KeyValue& kv) {
  auto v = kv_int(kv);
  if (v < -(1LL << 31) || v >= (1LL << 31))
    throw std::invalid_argument(fmt::format("line {}: '{}' out of range", kv.line, kv.key));
  return static_cast<int>(v);
}

}  // namespace

ojson run_options_to_json(const RunOptions& o) {
  ojson j;
  j["db"] = o.db.string();
  j["qa"] = o.qa.string();
  j["split"] = o.split;
  j["sample"] = o.sample;
  j["seed"] = o.seed;
  j["parallelism"] = o.parallelism;
  j["out"] = o.out.string();
  j["endpoint"] = o.endpoint;
  j["mock"] = o.mock.string();
  j["tools_url"] = o.tools_url;
  j["episode"] = episode_to_json(o.episode);
  j["limits"] = ojson{{"row_cap", o.limits.row_cap},
                      {"char_cap", o.limits.char_cap},
                      {"timeout_ms", o.limits.timeout.count()}};
  j["bm25"] = ojson{{"k1", o.bm25.k1}, {"b", o.bm25.b}, {"delta", o.bm25.delta}};
  return j;
}

RunOptions run_options_from_json(const ojson& j) {
  RunOptions o;
  o.db = j.at("db").get<std::string>();
  o.qa = j.at("qa").get<std::string>();
  o.split = j.at("split").get<std::string>();
  o.sample = j.at("sample").get<std::size_t>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.parallelism = j.at("parallelism").get<int>();
  o.out = j.at("out").get<std::string>();
  o.endpoint = j.at("endpoint").get<std::string>();
  o.mock = j.at("mock").get<std::string>();
  o.tools_url = j.at("tools_url").get<std::string>();
  o.episode = episode_from_json(j.at("episode"));
  const auto& l = j.at("limits");
  o.limits.row_cap = l.at("row_cap").get<std::size_t>();
  o.limits.char_cap = l.at("char_cap").get<std::size_t>();
  o.limits.timeout = std::chrono::milliseconds(l.at("timeout_ms").get<std::int64_t>());
  const auto& b = j.at("bm25");
  o.bm25 = {b.at("k1").get<double>(), b.at("b").get<double>(), b.at("delta").get<double>()};
  return o;
}

void apply_settings(std::string_view text, EpisodeConfig& episode, SandboxLimits& limits, Bm25Params& bm25,
                    ServerConfig* server) {
  for (const auto& kv : parse_key_values(text)) {
    const auto& k = kv.key;
    if (k == "context_window") episode.context_window = kv_int(kv);
    else if (k == "max_turns") episode.max_turns = as_int(kv);
    else if (k == "default_top_k") episode.default_top_k = as_int(kv);
    else if (k == "malformed_budget") episode.malformed_budget = as_int(kv);
    else if (k == "max_completion_tokens") episode.max_completion_tokens = as_int(kv);
    else if (k == "model") episode.model = kv.value;
    else if (k == "temperature") episode.temperature = kv_double(kv);
    else if (k == "endpoint_retries") episode.endpoint_retries = as_int(kv);
    else if (k == "retry_backoff_ms") episode.retry_backoff = std::chrono::milliseconds(kv_int(kv));
    else if (k == "row_cap") limits.row_cap = positive_size(kv);
    else if (k == "char_cap") limits.char_cap = positive_size(kv);
    else if (k == "timeout_ms") limits.timeout = std::chrono::milliseconds(positive_size(kv));
    else if (k == "bm25_k1") bm25.k1 = kv_double(kv);
    else if (k == "bm25_b") bm25.b = kv_double(kv);
    else if (k == "bm25_delta") bm25.delta = kv_double(kv);
    else if (server != nullptr && k == "bind") std::tie(server->host, server->port) = parse_bind_address(kv.value);
    else if (server != nullptr && k == "max_request_bytes") server->max_request_bytes = positive_size(kv);
    else kv_unknown(kv);
  }
  episode.validate();
  bm25.validate();
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> seeds;
  auto number = [&](std::string_view s) {
    KeyValue kv{"seeds", trim(s), 0};
    try {
      return kv_uint(kv);
    } catch (const std::invalid_argument&) {
      throw UsageError("bad seed list '" + std::string(text) + "'");
    }
  };
  for (const auto& part : split(text, ',')) {
    auto dots = part.find("..");
    if (dots == std::string::npos) {
      seeds.push_back(number(part));
      continue;
    }
    auto lo = number(std::string_view(part).substr(0, dots));
    auto hi = number(std::string_view(part).substr(dots + 2));
    if (hi < lo || hi - lo >= 100000) throw UsageError("bad seed range '" + part + "'");
    for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
  }
  if (seeds.empty()) throw UsageError("empty seed list");
  return seeds;
}

RunOutcome execute_run(const RunOptions& o, std::ostream& log) {
  auto started = std::chrono::steady_clock::now();
  auto split = parse_split(o.split);
  if (!split) throw UsageError("unknown split '" + o.split + "' (train, valid, test)");
  if (o.endpoint.empty() == o.mock.empty()) throw UsageError("run needs exactly one of --endpoint and --mock");
  if (o.parallelism < 1) throw UsageError("--parallelism must be >= 1");
  o.episode.validate();

  auto corpus = CorpusHandle::open(o.db);
  auto questions = load_qa_examples(o.qa);
  std::vector<QaExample> pool;
  for (auto& q : questions)
    if (q.split == *split) pool.push_back(q);
  if (pool.empty()) throw std::runtime_error("no " + o.split + " questions in " + o.qa.string());
  std::size_t n = o.sample == 0 ? pool.size() : o.sample;
  if (n > pool.size())
    throw std::runtime_error(fmt::format("--sample {} exceeds the {} {} questions", n, pool.size(), o.split));
  auto chosen = sample_questions(std::move(pool), n, o.seed);

  std::unique_ptr<LlmEndpoint> endpoint;
  if (!o.mock.empty())
    endpoint = std::make_unique<ScriptedEndpoint>(ScriptedEndpoint::from_file(o.mock));
  else
    endpoint = std::make_unique<HttpEndpoint>(o.endpoint, o.api_key);

  auto index = build_corpus_index(corpus, o.bm25);
  LocalTools local(corpus, index, o.limits, o.episode.default_top_k);
  std::unique_ptr<RemoteTools> remote;
  if (!o.tools_url.empty()) remote = std::make_unique<RemoteTools>(o.tools_url, o.episode.default_top_k);
  const ToolDispatcher& tools = remote ? static_cast<const ToolDispatcher&>(*remote) : local;

  auto transcripts = run_batch(chosen, *endpoint, tools, o.episode, o.parallelism);
  write_transcripts(o.out, transcripts);
  log << fmt::format("wrote {} transcripts to {}\n", transcripts.size(), o.out.string());

  RunOutcome outcome;
  auto& m = outcome.manifest;
  m.command = "run";
  m.config = run_options_to_json(o);
  m.inputs.push_back({o.db.string(), corpus.content_digest()});
  m.inputs.push_back({o.qa.string(), file_digest(o.qa)});
  if (!o.mock.empty()) m.inputs.push_back({o.mock.string(), file_digest(o.mock)});
  m.run_id = make_run_id(m.command, m.config, m.inputs);
  m.outputs.push_back({o.out.string(), file_digest(o.out)});
  m.started_at = utc_timestamp();
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  outcome.transcripts = std::move(transcripts);
  return outcome;
}

namespace {

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

void finish_manifest(RunManifest& m, std::chrono::steady_clock::time_point started) {
  m.run_id = make_run_id(m.command, m.config, m.inputs);
  m.started_at = utc_timestamp();
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
}

void maybe_write_manifest(const std::string& path, RunManifest& m, std::chrono::steady_clock::time_point started,
                          Streams& io) {
  if (path.empty()) return;
  finish_manifest(m, started);
  write_manifest(path, m);
  io.out << "manifest: " << path << "\n";
}

std::vector<grpo::TeacherRecord> load_teacher_records(const std::filesystem::path& path,
                                                      const std::vector<QaExample>& questions) {
  std::map<std::string, const QaExample*> by_id;
  for (const auto& q : questions) by_id.emplace(q.question_id, &q);
  std::vector<grpo::TeacherRecord> out;
  std::size_t line_no = 0;
  for (const auto& line : split(read_file(path.string()), '\n')) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw std::runtime_error(fmt::format("{} line {}: not a JSON object", path.string(), line_no));
    auto id = j.value("question_id", std::string());
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw std::runtime_error(fmt::format("{} line {}: unknown question_id '{}'", path.string(), line_no, id));
    grpo::TeacherRecord r{id, std::nullopt, it->second->gold_answer};
    auto a = j.find("answer");
    if (a != j.end() && a->is_string()) {
      r.teacher_answer = protocol::split_answer_items(a->get<std::string>());
    } else if (a != j.end() && a->is_array()) {
      std::vector<std::string> items;
      for (const auto& item : *a) {
        if (!item.is_string())
          throw std::runtime_error(fmt::format("{} line {}: answer items must be strings", path.string(), line_no));
        items.push_back(item.get<std::string>());
      }
      r.teacher_answer = std::move(items);
    } else if (a != j.end() && !a->is_null()) {
      throw std::runtime_error(fmt::format("{} line {}: answer must be a list, a string or null", path.string(), line_no));
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string idle_summary(const sim::ScheduleTrace& trace) {
  auto r = sim::idle_report(trace);
  std::string s = fmt::format("mode: {}\n", sim::to_string(trace.mode));
  s += fmt::format("makespan: {:.6f}\n", r.makespan);
  s += fmt::format("samples generated: {}\n", trace.samples.size());
  s += fmt::format("left in buffer: {}\n", trace.final_buffer.size());
  s += fmt::format("total idle: {:.6f}\n", r.total_idle);
  s += fmt::format("idle fraction: {:.6f}\n", r.idle_fraction);
  s += fmt::format("straggler idle: {:.6f}\n", r.straggler_idle);
  s += fmt::format("idle during training: {:.6f}\n", r.idle_during_training);
  return s;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Streams io{out, err};
  CLI::App app{"Table question answering agent environment"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // ingest
  std::string ingest_corpus, ingest_qa, ingest_db = "tableqa.db", manifest_path;
  auto* ingest = app.add_subcommand("ingest", "Load a table corpus into a SQLite database");
  ingest->add_option("corpus", ingest_corpus, "Table corpus (JSONL)")->required()->check(CLI::ExistingFile);
  ingest->add_option("qa", ingest_qa, "Question file (JSONL)")->required()->check(CLI::ExistingFile);
  ingest->add_option("--db", ingest_db, "Output database")->capture_default_str();
  ingest->add_option("--manifest", manifest_path, "Write a run manifest here");

  // index
  std::string index_db = "tableqa.db", index_query, settings_path;
  int index_top_k = kDefaultTopK;
  auto* index = app.add_subcommand("index", "Build the BM25+ index and report its statistics");
  index->add_option("--db", index_db, "Corpus database")->capture_default_str();
  index->add_option("--query", index_query, "Run one search against the index");
  index->add_option("--top-k", index_top_k, "Results for --query")->capture_default_str()->check(CLI::PositiveNumber);
  index->add_option("--config", settings_path, "Settings file (key = value)")->check(CLI::ExistingFile);
  index->add_option("--manifest", manifest_path, "Write a run manifest here");

  // serve
  std::string serve_db = "tableqa.db", serve_bind;
  auto* serve = app.add_subcommand("serve", "Serve the search and code_interpreter tools over HTTP");
  serve->add_option("--db", serve_db, "Corpus database")->capture_default_str();
  serve->add_option("--bind", serve_bind, "host:port (default 127.0.0.1:8080, env TABLEQA_BIND)");
  serve->add_option("--config", settings_path, "Settings file (key = value)")->check(CLI::ExistingFile);

  // run
  RunOptions ro;
  std::string ro_db = "tableqa.db", ro_qa, ro_out = "transcripts.jsonl", ro_mock, ro_endpoint;
  auto* run = app.add_subcommand("run", "Run agent episodes against an endpoint");
  run->add_option("--db", ro_db, "Corpus database")->capture_default_str();
  run->add_option("--qa", ro_qa, "Question file (JSONL)")->required()->check(CLI::ExistingFile);
  run->add_option("--endpoint", ro_endpoint, "Chat-completions URL (env TABLEQA_ENDPOINT)");
  run->add_option("--mock", ro_mock, "Scripted responses instead of an endpoint")->check(CLI::ExistingFile);
  run->add_option("--api-key", ro.api_key, "Bearer token for --endpoint");
  run->add_option("--split", ro.split, "train, valid or test")->capture_default_str();
  run->add_option("--sample", ro.sample, "Questions to sample (0 = all)")->capture_default_str();
  run->add_option("--seed", ro.seed, "Sampling seed")->capture_default_str();
  run->add_option("--parallelism", ro.parallelism, "Concurrent episodes")->capture_default_str();
  run->add_option("--out", ro_out, "Transcript file")->capture_default_str();
  run->add_option("--tools-url", ro.tools_url, "Use a running tool server instead of in-process tools");
  run->add_option("--config", settings_path, "Settings file (key = value)")->check(CLI::ExistingFile);
  run->add_option("--manifest", manifest_path, "Manifest path (default: <out>.manifest.json)");

  // eval
  std::string eval_transcripts, eval_qa, eval_mode = "multiset", eval_label, eval_summary;
  auto* eval = app.add_subcommand("eval", "Score transcripts by exact match");
  eval->add_option("transcripts", eval_transcripts, "Transcript file")->required()->check(CLI::ExistingFile);
  eval->add_option("qa", eval_qa, "Question file (JSONL)")->required()->check(CLI::ExistingFile);
  eval->add_option("--mode", eval_mode, "multiset or ordered")->capture_default_str();
  eval->add_option("--label", eval_label, "Row label (default: transcript file stem)");
  eval->add_option("--summary", eval_summary, "Write the summary record (JSON) here");
  eval->add_option("--manifest", manifest_path, "Write a run manifest here");

  // grpo-loss
  std::string rollouts_path;
  grpo::GrpoConfig gcfg;
  auto* gl = app.add_subcommand("grpo-loss", "Compute the clipped group-relative loss and its per-step gradients");
  gl->add_option("rollouts", rollouts_path, "Rollout groups (JSONL)")->required()->check(CLI::ExistingFile);
  gl->add_option("--epsilon", gcfg.epsilon, "Clip range")->capture_default_str();
  gl->add_option("--std-epsilon", gcfg.std_epsilon, "Added to the reward std")->capture_default_str();
  gl->add_flag("--token-mean", gcfg.token_mean, "Divide by the number of masked-in tokens");
  gl->add_option("--manifest", manifest_path, "Write a run manifest here");

  // partition
  std::string teacher_path, part_qa, part_mode = "multiset", part_out;
  auto* part = app.add_subcommand("partition", "Split questions by whether the teacher answered them");
  part->add_option("teacher-answers", teacher_path, "Teacher answers (JSONL)")->required()->check(CLI::ExistingFile);
  part->add_option("qa", part_qa, "Question file (JSONL)")->required()->check(CLI::ExistingFile);
  part->add_option("--mode", part_mode, "multiset or ordered")->capture_default_str();
  part->add_option("--out", part_out, "Write {\"simple\": [...], \"difficult\": [...]} here");
  part->add_option("--manifest", manifest_path, "Write a run manifest here");

  // simulate
  std::string sim_mode = "compare", sim_config, sim_seeds, sim_trace;
  bool sim_gantt = false;
  int gantt_width = 100;
  auto* simulate = app.add_subcommand("simulate", "Simulate plain and async rollout scheduling");
  simulate->add_option("--mode", sim_mode, "plain, async or compare")->capture_default_str();
  simulate->add_option("--config", sim_config, "Simulator settings (key = value)")->check(CLI::ExistingFile);
  simulate->add_option("--seeds", sim_seeds, "Seeds, e.g. 1..20 (default: the config seed)");
  simulate->add_option("--trace", sim_trace, "Write the event trace (JSONL); plain/async only");
  simulate->add_flag("--gantt", sim_gantt, "Print a text timeline; plain/async only");
  simulate->add_option("--width", gantt_width, "Timeline width")->capture_default_str();
  simulate->add_option("--manifest", manifest_path, "Write a run manifest here");

  // serve-mock
  std::string mock_script, mock_bind = "127.0.0.1:8000";
  auto* smock = app.add_subcommand("serve-mock", "Serve scripted chat completions over HTTP");
  smock->add_option("script", mock_script, "Scripted responses (JSONL)")->required()->check(CLI::ExistingFile);
  smock->add_option("--bind", mock_bind, "host:port")->capture_default_str();

  // replay
  std::string replay_manifest, replay_out;
  auto* replay = app.add_subcommand("replay", "Re-run a manifest and compare its outputs");
  replay->add_option("manifest", replay_manifest, "Manifest written by run")->required()->check(CLI::ExistingFile);
  replay->add_option("--out", replay_out, "Transcript file for the re-run (default: <out>.replay)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  auto started = std::chrono::steady_clock::now();
  try {
    RunManifest m;
    if (*ingest) {
      auto corpus = CorpusHandle::ingest(ingest_corpus, ingest_db);
      auto questions = load_qa_examples(ingest_qa);
      auto stats = corpus_stats(corpus, questions);
      out << fmt::format("ingested {} tables into {}\n", stats.num_tables, ingest_db);
      out << fmt::format("questions: train={} valid={} test={}\n", stats.train_questions, stats.valid_questions,
                         stats.test_questions);
      m.command = "ingest";
      m.config = ojson{{"corpus", ingest_corpus}, {"qa", ingest_qa}, {"db", ingest_db}};
      m.inputs = {{ingest_corpus, file_digest(ingest_corpus)}, {ingest_qa, file_digest(ingest_qa)}};
      m.outputs = {{ingest_db, corpus.content_digest()}};
      maybe_write_manifest(manifest_path, m, started, io);
      return 0;
    }

    if (*index) {
      EpisodeConfig episode;
      SandboxLimits limits;
      Bm25Params bm25;
      if (!settings_path.empty()) apply_settings(read_file(settings_path), episode, limits, bm25, nullptr);
      auto corpus = CorpusHandle::open(index_db);
      auto idx = build_corpus_index(corpus, bm25);
      out << fmt::format("docs={} terms={} avgdl={:.3f}\n", idx.num_docs(), idx.num_terms(), idx.avgdl());
      if (!index_query.empty()) out << render_search_results(corpus, idx.search(index_query, index_top_k)) << "\n";
      m.command = "index";
      m.config = ojson{{"db", index_db}, {"k1", bm25.k1}, {"b", bm25.b}, {"delta", bm25.delta}, {"query", index_query}};
      m.inputs = {{index_db, corpus.content_digest()}};
      maybe_write_manifest(manifest_path, m, started, io);
      return 0;
    }

    if (*serve) {
      ServerConfig cfg;
      EpisodeConfig episode;
      if (!settings_path.empty()) apply_settings(read_file(settings_path), episode, cfg.limits, cfg.index, &cfg);
      if (auto b = env("TABLEQA_BIND")) std::tie(cfg.host, cfg.port) = parse_bind_address(*b);
      if (!serve_bind.empty()) std::tie(cfg.host, cfg.port) = parse_bind_address(serve_bind);
      cfg.corpus_db = serve_db;
      cfg.default_top_k = episode.default_top_k;
      cfg.validate();
      auto corpus = CorpusHandle::open(cfg.corpus_db);
      auto idx = build_corpus_index(corpus, cfg.index);
      LocalTools tools(corpus, idx, cfg.limits, cfg.default_top_k);
      ToolServer server(tools, cfg);
      out << fmt::format("serving {} tables on http://{}:{}\n", corpus.num_tables(), cfg.host, cfg.port) << std::flush;
      server.run(cfg.host, cfg.port);
      return 0;
    }

    if (*run) {
      ro.db = ro_db;
      ro.qa = ro_qa;
      ro.out = ro_out;
      ro.mock = ro_mock;
      ro.endpoint = ro_endpoint;
      if (ro.endpoint.empty() && ro.mock.empty())
        if (auto e = env("TABLEQA_ENDPOINT")) ro.endpoint = *e;
      if (!settings_path.empty()) apply_settings(read_file(settings_path), ro.episode, ro.limits, ro.bm25, nullptr);
      auto outcome = execute_run(ro, out);
      auto mpath = manifest_path.empty() ? ro.out.string() + ".manifest.json" : manifest_path;
      write_manifest(mpath, outcome.manifest);
      out << "manifest: " << mpath << "\n";
      return 0;
    }

    if (*eval) {
      auto mode = eval::parse_match_mode(eval_mode);
      if (!mode) throw UsageError("unknown --mode '" + eval_mode + "' (multiset, ordered)");
      auto transcripts = read_transcripts(eval_transcripts);
      auto questions = load_qa_examples(eval_qa);
      auto label = eval_label.empty() ? std::filesystem::path(eval_transcripts).stem().string() : eval_label;
      auto row = eval::aggregate(transcripts, eval::golds_for(transcripts, questions), *mode, label);
      out << eval::report({row});
      out << format_row(row) << "\n";
      m.command = "eval";
      m.config = ojson{{"transcripts", eval_transcripts}, {"qa", eval_qa}, {"mode", eval_mode}, {"label", label}};
      m.inputs = {{eval_transcripts, file_digest(eval_transcripts)}, {eval_qa, file_digest(eval_qa)}};
      if (!eval_summary.empty()) {
        write_file(eval_summary, eval::summary_record(row, *mode).dump() + "\n");
        m.outputs = {{eval_summary, file_digest(eval_summary)}};
      }
      maybe_write_manifest(manifest_path, m, started, io);
      return 0;
    }

    if (*gl) {
      gcfg.validate();
      auto groups = grpo::read_rollouts(rollouts_path);
      if (groups.empty()) throw std::runtime_error("no rollout groups in " + rollouts_path);
      double total = 0.0;
      for (const auto& g : groups) {
        double loss = grpo::grpo_loss(g, gcfg);
        total += loss;
        out << fmt::format("{}\t{:.17g}\n", g.question_id, loss);
        auto grads = grpo::grpo_loss_grad(g, gcfg);
        for (std::size_t i = 0; i < grads.size(); ++i) {
          std::string line = fmt::format("  grad ep{}\t", i);
          for (std::size_t t = 0; t < grads[i].size(); ++t) line += fmt::format("{}{:.17g}", t ? " " : "", grads[i][t]);
          out << line << "\n";
        }
      }
      out << fmt::format("total\t{:.17g}\n", total);
      m.command = "grpo-loss";
      m.config = ojson{{"rollouts", rollouts_path}, {"epsilon", gcfg.epsilon}, {"std_epsilon", gcfg.std_epsilon},
                       {"token_mean", gcfg.token_mean}};
      m.inputs = {{rollouts_path, file_digest(rollouts_path)}};
      maybe_write_manifest(manifest_path, m, started, io);
      return 0;
    }

    if (*part) {
      auto mode = eval::parse_match_mode(part_mode);
      if (!mode) throw UsageError("unknown --mode '" + part_mode + "' (multiset, ordered)");
      auto questions = load_qa_examples(part_qa);
      auto p = grpo::partition_simple_difficult(load_teacher_records(teacher_path, questions), *mode);
      out << fmt::format("simple={}, difficult={}\n", p.simple.size(), p.difficult.size());
      m.command = "partition";
      m.config = ojson{{"teacher_answers", teacher_path}, {"qa", part_qa}, {"mode", part_mode}};
      m.inputs = {{teacher_path, file_digest(teacher_path)}, {part_qa, file_digest(part_qa)}};
      if (!part_out.empty()) {
        write_file(part_out, ojson{{"simple", p.simple}, {"difficult", p.difficult}}.dump() + "\n");
        m.outputs = {{part_out, file_digest(part_out)}};
      }
      maybe_write_manifest(manifest_path, m, started, io);
      return 0;
    }

    if (*simulate) {
      sim::SimConfig cfg;
      if (!sim_config.empty()) cfg = sim::sim_config_from_kv(read_file(sim_config));
      cfg.validate();
      auto seeds = sim_seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : parse_seed_list(sim_seeds);
      m.command = "simulate";
      m.config = ojson{{"mode", sim_mode}, {"sim", sim::sim_config_to_json(cfg)}, {"seeds", seeds}};
      if (!sim_config.empty()) m.inputs = {{sim_config, file_digest(sim_config)}};
      if (sim_mode == "compare") {
        if (!sim_trace.empty() || sim_gantt) throw UsageError("--trace and --gantt need --mode plain or async");
        out << sim::render_comparison(sim::compare(cfg, seeds));
      } else if (sim_mode == "plain" || sim_mode == "async") {
        if (seeds.size() != 1) throw UsageError("--mode " + sim_mode + " takes a single seed");
        cfg.seed = seeds.front();
        auto trace = sim_mode == "plain" ? sim::simulate_plain(cfg) : sim::simulate_async(cfg);
        out << idle_summary(trace);
        if (sim_gantt) out << sim::render_gantt(trace, gantt_width);
        if (!sim_trace.empty()) {
          write_file(sim_trace, sim::export_trace_jsonl(trace));
          m.outputs = {{sim_trace, file_digest(sim_trace)}};
        }
      } else {
        throw UsageError("unknown --mode '" + sim_mode + "' (plain, async, compare)");
      }
      maybe_write_manifest(manifest_path, m, started, io);
      return 0;
    }

    if (*smock) {
      auto [host, port] = parse_bind_address(mock_bind);
      auto backend = ScriptedEndpoint::from_file(mock_script);
      MockLlmServer server(backend);
      out << fmt::format("mock endpoint on http://{}:{}/v1/chat/completions\n", host, port) << std::flush;
      server.run(host, port);
      return 0;
    }

    if (*replay) {
      auto original = read_manifest(replay_manifest);
      if (original.command != "run") throw UsageError("replay supports manifests written by run");
      auto o = run_options_from_json(original.config);
      if (original.outputs.empty()) throw std::runtime_error("manifest lists no outputs");
      auto expected = original.outputs.front();
      o.out = replay_out.empty() ? expected.path + ".replay" : replay_out;
      auto outcome = execute_run(o, out);
      auto got = outcome.manifest.outputs.front().digest;
      if (got == expected.digest) {
        out << fmt::format("replay identical: {} matches {} ({})\n", o.out.string(), expected.path, got);
        return 0;
      }
      out << fmt::format("replay differs: {} has digest {}, manifest recorded {}\n", o.out.string(), got,
                         expected.digest);
      return 1;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace tableqa::cli
