#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "cli.hpp"
#include "support.hpp"
#include "tableqa/config.hpp"
#include "tableqa/service.hpp"

using namespace tableqa;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "tableqa");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string data(const std::string& name) { return testing::data_path(name).string(); }

std::string ingest_into(const testing::TempDir& dir) {
  auto db = (dir / "c.db").string();
  auto r = invoke({"ingest", data("fixture_tables.jsonl"), data("fixture_qa.jsonl"), "--db", db});
  REQUIRE(r.code == 0);
  return db;
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

struct EnvGuard {
  std::string name;
  EnvGuard(std::string n, const std::string& v) : name(std::move(n)) { ::setenv(name.c_str(), v.c_str(), 1); }
  ~EnvGuard() { ::unsetenv(name.c_str()); }
};

}  // namespace

TEST_CASE("ingest, run against the mock, eval") {
  testing::TempDir dir;
  auto db = (dir / "c.db").string();
  auto ing = invoke({"ingest", data("fixture_tables.jsonl"), data("fixture_qa.jsonl"), "--db", db, "--manifest",
                  (dir / "ingest.json").string()});
  REQUIRE(ing.code == 0);
  CHECK(ing.out.find("ingested 25 tables") != std::string::npos);
  CHECK(ing.out.find("train=2 valid=1 test=10") != std::string::npos);
  CHECK(read_manifest(dir / "ingest.json").command == "ingest");

  auto idx = invoke({"index", "--db", db, "--query", "olympics host city", "--top-k", "3"});
  REQUIRE(idx.code == 0);
  CHECK(idx.out.rfind("docs=25 ", 0) == 0);
  CHECK(idx.out.find("\n1. olympics_hosts |") != std::string::npos);

  auto out = (dir / "t.jsonl").string();
  auto run = invoke({"run", "--db", db, "--qa", data("fixture_qa.jsonl"), "--mock", data("fixture_mock.jsonl"), "--out", out});
  REQUIRE(run.code == 0);
  CHECK(run.out.find("wrote 10 transcripts") != std::string::npos);
  auto m = read_manifest(out + ".manifest.json");
  CHECK(m.command == "run");
  CHECK(m.outputs.at(0).digest == file_digest(out));
  CHECK(m.config["split"] == "test");

  auto summary = (dir / "s.json").string();
  auto ev = invoke({"eval", out, data("fixture_qa.jsonl"), "--label", "fixture", "--summary", summary});
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("fixture") != std::string::npos);
  CHECK(ev.out.find("100.0%") != std::string::npos);
  auto s = json::parse(read_file(summary));
  CHECK(s["n"] == 10);
  CHECK(s["matches"] == 10);
  CHECK(invoke({"eval", out, data("fixture_qa.jsonl"), "--mode", "ordered"}).code == 0);
  CHECK(invoke({"eval", out, data("fixture_qa.jsonl"), "--mode", "fuzzy"}).code == 2);
}

TEST_CASE("replay reproduces the transcript file") {
  testing::TempDir dir;
  auto db = ingest_into(dir);
  auto out = (dir / "t.jsonl").string();
  REQUIRE(invoke({"run", "--db", db, "--qa", data("fixture_qa.jsonl"), "--mock", data("fixture_mock.jsonl"), "--out", out,
               "--parallelism", "3"})
              .code == 0);
  auto again = (dir / "again.jsonl").string();
  auto r = invoke({"replay", out + ".manifest.json", "--out", again});
  CHECK(r.code == 0);
  CHECK(r.out.find("replay identical") != std::string::npos);
  CHECK(read_file(again) == read_file(out));

  // A corrupted original is detected.
  auto m = read_manifest(out + ".manifest.json");
  m.outputs[0].digest = "0000000000000000";
  write_manifest(dir / "bad.json", m);
  auto d = invoke({"replay", (dir / "bad.json").string(), "--out", (dir / "x.jsonl").string()});
  CHECK(d.code == 1);
  CHECK(d.out.find("replay differs") != std::string::npos);
}

TEST_CASE("sampling with the same seed picks the same questions") {
  testing::TempDir dir;
  auto db = ingest_into(dir);
  auto ids = [&](const std::string& seed, const std::string& name) {
    auto out = (dir / name).string();
    REQUIRE(invoke({"run", "--db", db, "--qa", data("fixture_qa.jsonl"), "--mock", data("fixture_mock.jsonl"), "--out", out,
                 "--sample", "4", "--seed", seed})
                .code == 0);
    std::vector<std::string> v;
    for (const auto& t : read_transcripts(out)) v.push_back(t.question_id);
    return v;
  };
  auto a = ids("7", "a.jsonl");
  auto b = ids("7", "b.jsonl");
  CHECK(a.size() == 4);
  CHECK(a == b);
  CHECK(read_file(dir / "a.jsonl") == read_file(dir / "b.jsonl"));
  CHECK(invoke({"run", "--db", db, "--qa", data("fixture_qa.jsonl"), "--mock", data("fixture_mock.jsonl"), "--sample", "11",
             "--out", (dir / "c.jsonl").string()})
            .code == 1);
}

TEST_CASE("partition of the fixture teacher answers") {
  testing::TempDir dir;
  auto out = (dir / "p.json").string();
  auto r = invoke({"partition", data("fixture_teacher.jsonl"), data("fixture_qa.jsonl"), "--out", out});
  REQUIRE(r.code == 0);
  CHECK(r.out == "simple=8, difficult=5\n");
  auto j = json::parse(read_file(out));
  CHECK(j["simple"].size() == 8);
  CHECK(j["difficult"].size() == 5);
}

TEST_CASE("grpo-loss prints the loss and per-step gradients") {
  testing::TempDir dir;
  grpo::RolloutGroup g;
  g.question_id = "q";
  for (double r : {1.0, 0.0}) {
    grpo::RolloutEpisode ep;
    ep.reward = r;
    ep.steps = {{-1.0, -1.0, true}, {-2.0, -2.0, false}, {-0.5, -0.6, true}};
    g.episodes.push_back(ep);
  }
  write_file(dir / "r.jsonl", grpo::rollout_group_to_json(g).dump() + "\n");
  auto r = invoke({"grpo-loss", (dir / "r.jsonl").string()});
  REQUIRE(r.code == 0);
  auto lines = lines_of(r.out);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0].rfind("q\t", 0) == 0);
  CHECK(std::stod(lines[0].substr(2)) == doctest::Approx(grpo::grpo_loss(g, {})).epsilon(1e-15));
  auto grads = grpo::grpo_loss_grad(g, {});
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(lines[1 + i].rfind("  grad ep" + std::to_string(i) + "\t", 0) == 0);
    std::istringstream in(lines[1 + i].substr(lines[1 + i].find('\t') + 1));
    std::vector<double> got;
    for (double x; in >> x;) got.push_back(x);
    REQUIRE(got.size() == 3);
    for (std::size_t t = 0; t < 3; ++t) CHECK(got[t] == grads[i][t]);
  }
  CHECK(lines[1].find(" 0 ") != std::string::npos);
  CHECK(lines[3].rfind("total\t", 0) == 0);
  CHECK(invoke({"grpo-loss", (dir / "r.jsonl").string(), "--epsilon", "0"}).code == 1);
}

TEST_CASE("simulate compare over twenty seeds") {
  auto r = invoke({"simulate", "--mode", "compare", "--seeds", "1..20"});
  REQUIRE(r.code == 0);
  auto lines = lines_of(r.out);
  REQUIRE(lines.size() == 22);
  CHECK(lines[0].find("plain_straggle") != std::string::npos);
  for (int i = 1; i <= 20; ++i) {
    std::istringstream in(lines[static_cast<std::size_t>(i)]);
    int seed;
    in >> seed;
    CHECK(seed == i);
  }
  CHECK(lines[21].rfind("mean straggler idle: plain ", 0) == 0);
  CHECK(invoke({"simulate", "--mode", "compare", "--seeds", "1..20"}).out == r.out);

  testing::TempDir dir;
  write_file(dir / "sim.kv", "num_engines = 1\nrollout_batch = 4\ntraining_batch = 2\nbuffer_size = 4\n"
                             "gen_time = constant\ngen_constant = 1\ntrain_step_time = 1\nsync_time = 1\nnum_cycles = 2\n");
  auto plain = invoke({"simulate", "--mode", "plain", "--config", (dir / "sim.kv").string(), "--gantt", "--trace",
                    (dir / "trace.jsonl").string()});
  INFO(plain.err);
  REQUIRE(plain.code == 0);
  CHECK(plain.out.find("makespan: 12.000000") != std::string::npos);
  CHECK(plain.out.find("trainer") != std::string::npos);
  CHECK(!read_file(dir / "trace.jsonl").empty());
  auto as = invoke({"simulate", "--mode", "async", "--config", (dir / "sim.kv").string()});
  CHECK(as.out.find("makespan: 10.000000") != std::string::npos);
}

TEST_CASE("usage errors exit 2, runtime failures exit 1") {
  CHECK(invoke({}).code == 2);
  CHECK(invoke({"frobnicate"}).code == 2);
  CHECK(invoke({"eval"}).code == 2);
  CHECK(invoke({"simulate", "--mode", "sideways"}).code == 2);
  CHECK(invoke({"simulate", "--mode", "plain", "--seeds", "1..3"}).code == 2);
  CHECK(invoke({"simulate", "--mode", "compare", "--seeds", "9..1"}).code == 2);
  CHECK(invoke({"simulate", "--mode", "compare", "--gantt"}).code == 2);
  CHECK(invoke({"run", "--qa", data("fixture_qa.jsonl")}).code == 2);
  testing::TempDir dir;
  auto db = ingest_into(dir);
  CHECK(invoke({"run", "--db", db, "--qa", data("fixture_qa.jsonl"), "--mock", data("fixture_mock.jsonl"), "--split",
             "dev"})
            .code == 2);
  auto missing = invoke({"index", "--db", (dir / "none.db").string()});
  CHECK(missing.code == 1);
  CHECK(missing.err.rfind("error: ", 0) == 0);
  CHECK(invoke({"--help"}).code == 0);
}

TEST_CASE("environment overrides") {
  testing::TempDir dir;
  auto db = ingest_into(dir);
  write_file(dir / "fast.kv", "retry_backoff_ms = 0\nendpoint_retries = 1\n");
  {
    EnvGuard e("TABLEQA_ENDPOINT", "http://127.0.0.1:1/v1/chat/completions");
    auto out = (dir / "t.jsonl").string();
    auto r = invoke({"run", "--db", db, "--qa", data("fixture_qa.jsonl"), "--sample", "1", "--config",
                  (dir / "fast.kv").string(), "--out", out});
    REQUIRE(r.code == 0);
    auto m = read_manifest(out + ".manifest.json");
    CHECK(m.config["endpoint"] == "http://127.0.0.1:1/v1/chat/completions");
    auto ts = read_transcripts(out);
    REQUIRE(ts.size() == 1);
    CHECK(ts[0].termination == Termination::endpoint_error);
    // --mock wins over the environment.
    auto mocked = invoke({"run", "--db", db, "--qa", data("fixture_qa.jsonl"), "--mock", data("fixture_mock.jsonl"), "--out",
                       (dir / "m.jsonl").string()});
    CHECK(mocked.code == 0);
  }
  {
    EnvGuard e("TABLEQA_BIND", "not-an-address");
    CHECK(invoke({"serve", "--db", db}).code != 0);
  }
}

TEST_CASE("seed lists and settings") {
  CHECK(cli::parse_seed_list("1..3,10") == std::vector<std::uint64_t>{1, 2, 3, 10});
  CHECK(cli::parse_seed_list("7") == std::vector<std::uint64_t>{7});
  CHECK_THROWS(cli::parse_seed_list("a..b"));
  CHECK_THROWS(cli::parse_seed_list(""));
  EpisodeConfig e;
  SandboxLimits l;
  Bm25Params b;
  ServerConfig s;
  cli::apply_settings("context_window = 800\nrow_cap = 5\nbm25_k1 = 0.9\nbind = 0.0.0.0:9001\n", e, l, b, &s);
  CHECK(e.context_window == 800);
  CHECK(l.row_cap == 5);
  CHECK(b.k1 == 0.9);
  CHECK(s.port == 9001);
  CHECK_THROWS(cli::apply_settings("no_such_key = 1\n", e, l, b, nullptr));
  CHECK_THROWS(cli::apply_settings("bind = 0.0.0.0:1\n", e, l, b, nullptr));

  cli::RunOptions o;
  o.db = "x.db";
  o.qa = "q.jsonl";
  o.mock = "m.jsonl";
  o.sample = 3;
  o.seed = 99;
  o.api_key = "secret";
  o.episode.max_turns = 7;
  auto j = cli::run_options_to_json(o);
  CHECK(j.dump().find("secret") == std::string::npos);
  auto back = cli::run_options_from_json(j);
  CHECK(back.sample == 3);
  CHECK(back.seed == 99);
  CHECK(back.episode.max_turns == 7);
  CHECK(cli::run_options_to_json(back).dump() == j.dump());
}
