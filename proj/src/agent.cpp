#include "tableqa/agent.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <random>
#include <thread>

#include "tableqa/protocol.hpp"
#include "tableqa/text.hpp"

namespace tableqa {

using nlohmann::json;
using nlohmann::ordered_json;

void EpisodeConfig::validate() const {
  if (context_window <= 0) throw std::invalid_argument("episode: context_window must be positive");
  if (default_top_k < 1) throw std::invalid_argument("episode: default_top_k must be at least 1");
  if (max_turns < 0) throw std::invalid_argument("episode: max_turns must be non-negative");
  if (malformed_budget < 1) throw std::invalid_argument("episode: malformed_budget must be at least 1");
  if (max_completion_tokens < 1) throw std::invalid_argument("episode: max_completion_tokens must be positive");
  if (endpoint_retries < 0) throw std::invalid_argument("episode: endpoint_retries must be non-negative");
}

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::answered: return "answered";
    case Termination::turn_cap: return "turn_cap";
    case Termination::context_exhausted: return "context_exhausted";
    case Termination::malformed: return "malformed";
    case Termination::endpoint_error: return "endpoint_error";
  }
  return "endpoint_error";
}

std::optional<Termination> parse_termination(std::string_view name) {
  for (auto t : {Termination::answered, Termination::turn_cap, Termination::context_exhausted, Termination::malformed,
                 Termination::endpoint_error})
    if (to_string(t) == name) return t;
  return std::nullopt;
}

std::int64_t WordPieceCounter::count(std::string_view text) const {
  return static_cast<std::int64_t>(count_word_pieces(text));
}

const TokenCounter& default_token_counter() {
  static const WordPieceCounter counter;
  return counter;
}

std::int64_t count_tokens(std::string_view text, const TokenCounter& counter) { return counter.count(text); }

namespace {

struct EpisodeState {
  EpisodeTranscript& t;
  std::vector<ChatMessage> conversation;

  void append(std::string role, std::string content, std::int64_t tokens) {
    conversation.push_back({role, content});
    t.messages.push_back({std::move(role), std::move(content), tokens});
  }
  void recompute_total() { t.total_tokens = t.template_tokens + t.completion_tokens + t.tool_tokens; }
};

std::optional<ChatCompletion> call_with_retries(LlmEndpoint& endpoint, const ChatRequest& request,
                                                const EpisodeConfig& cfg, EndpointCallLog& log, std::string& error) {
  for (int attempt = 0; attempt <= cfg.endpoint_retries; ++attempt) {
    log.attempts = attempt + 1;
    try {
      return endpoint.complete(request);
    } catch (const EndpointError& e) {
      error = e.what();
    }
    if (attempt < cfg.endpoint_retries && cfg.retry_backoff.count() > 0)
      std::this_thread::sleep_for(cfg.retry_backoff * (1 << attempt));
  }
  return std::nullopt;
}

std::string malformed_feedback(const protocol::ParsedAssistantTurn& parsed) {
  std::string msg = "error: no valid <tool_call> or <answer> found in the last message";
  for (const auto& d : parsed.diagnostics) msg += "\n- offset " + std::to_string(d.offset) + ": " + d.reason;
  return msg;
}

}  // namespace

EpisodeTranscript run_episode(const QaExample& question, LlmEndpoint& endpoint, const ToolDispatcher& tools,
                              const EpisodeConfig& cfg, const TokenCounter& counter) {
  cfg.validate();
  EpisodeTranscript t;
  t.question_id = question.question_id;
  EpisodeState st{t, {}};

  auto system = protocol::render_system_prompt(protocol::default_tool_schemas());
  auto user = protocol::render_user_prompt(question.question);
  auto system_tokens = counter.count(system);
  auto user_tokens = counter.count(user);
  st.append("system", std::move(system), system_tokens);
  st.append("user", std::move(user), user_tokens);
  t.template_tokens = system_tokens + user_tokens;
  st.recompute_total();

  int consecutive_malformed = 0;
  while (true) {
    if (cfg.max_turns > 0 && t.turns >= cfg.max_turns) {
      t.termination = Termination::turn_cap;
      break;
    }
    if (t.total_tokens >= cfg.context_window) {
      t.termination = Termination::context_exhausted;
      break;
    }

    ChatRequest request{cfg.model, st.conversation,
                        static_cast<int>(std::min<std::int64_t>(cfg.max_completion_tokens,
                                                                cfg.context_window - t.total_tokens)),
                        cfg.temperature};
    EndpointCallLog log{t.turns + 1, 0, std::nullopt};
    auto completion = call_with_retries(endpoint, request, cfg, log, t.error);
    if (!completion) {
      t.endpoint_calls.push_back(log);
      t.termination = Termination::endpoint_error;
      break;
    }
    t.error.clear();
    log.usage = completion->usage;
    t.endpoint_calls.push_back(log);
    ++t.turns;

    if (t.turns == 1 && completion->usage) t.template_tokens = completion->usage->prompt_tokens;
    auto completion_tokens = completion->usage ? completion->usage->completion_tokens : counter.count(completion->content);
    t.completion_tokens += completion_tokens;
    auto parsed = protocol::parse_assistant_message(completion->content);
    st.append("assistant", std::move(completion->content), completion_tokens);
    st.recompute_total();

    if (parsed.final_answer) {
      t.final_answer = std::move(parsed.final_answer);
      t.termination = Termination::answered;
      break;
    }
    if (t.total_tokens >= cfg.context_window) {
      t.termination = Termination::context_exhausted;
      break;
    }

    std::string tool_message;
    std::size_t first_logged = t.tool_calls.size();
    if (parsed.tool_calls.empty()) {
      if (++consecutive_malformed >= cfg.malformed_budget) {
        t.termination = Termination::malformed;
        break;
      }
      tool_message = protocol::render_tool_response({{"", ToolResult{false, malformed_feedback(parsed), 0, false}}});
    } else {
      consecutive_malformed = 0;
      std::vector<std::pair<std::string, ToolResult>> results;
      for (const auto& call : parsed.tool_calls) {
        ToolResult r;
        try {
          r = tools.dispatch(call);
        } catch (const std::exception& e) {
          r = ToolResult{false, std::string("error: ") + e.what(), 0, false};
        }
        t.tool_calls.push_back({t.turns, call.name, call.arguments, r.ok, r.rows_returned, r.truncated, true});
        results.emplace_back(call.name, std::move(r));
      }
      tool_message = protocol::render_tool_response(results);
    }

    auto tool_tokens = counter.count(tool_message);
    if (t.total_tokens + tool_tokens >= cfg.context_window) {
      for (auto i = first_logged; i < t.tool_calls.size(); ++i) t.tool_calls[i].delivered = false;
      t.termination = Termination::context_exhausted;
      break;
    }
    t.tool_tokens += tool_tokens;
    st.append("tool", std::move(tool_message), tool_tokens);
    st.recompute_total();
  }
  return t;
}

std::vector<EpisodeTranscript> run_batch(const std::vector<QaExample>& questions, LlmEndpoint& endpoint,
                                         const ToolDispatcher& tools, const EpisodeConfig& cfg, int parallelism,
                                         const TokenCounter& counter) {
  if (parallelism < 1) throw std::invalid_argument("run_batch: parallelism must be at least 1");
  cfg.validate();
  std::vector<EpisodeTranscript> out(questions.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (auto i = next.fetch_add(1); i < questions.size(); i = next.fetch_add(1)) {
      try {
        out[i] = run_episode(questions[i], endpoint, tools, cfg, counter);
      } catch (const std::exception& e) {
        out[i] = EpisodeTranscript{};
        out[i].question_id = questions[i].question_id;
        out[i].termination = Termination::endpoint_error;
        out[i].error = e.what();
      }
    }
  };
  auto n = std::min<std::size_t>(static_cast<std::size_t>(parallelism), std::max<std::size_t>(questions.size(), 1));
  std::vector<std::thread> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return out;
}

ordered_json transcript_to_json(const EpisodeTranscript& t) {
  ordered_json j;
  j["question_id"] = t.question_id;
  j["termination"] = std::string(to_string(t.termination));
  j["final_answer"] = t.final_answer ? ordered_json(*t.final_answer) : ordered_json(nullptr);
  j["turns"] = t.turns;
  j["template_tokens"] = t.template_tokens;
  j["completion_tokens"] = t.completion_tokens;
  j["tool_tokens"] = t.tool_tokens;
  j["total_tokens"] = t.total_tokens;
  j["error"] = t.error;
  j["messages"] = ordered_json::array();
  for (const auto& m : t.messages)
    j["messages"].push_back(ordered_json{{"role", m.role}, {"content", m.content}, {"tokens", m.tokens}});
  j["tool_calls"] = ordered_json::array();
  for (const auto& c : t.tool_calls) {
    ordered_json e;
    e["turn"] = c.turn;
    e["name"] = c.name;
    e["arguments"] = ordered_json::parse(c.arguments.dump());
    e["ok"] = c.ok;
    e["rows_returned"] = c.rows_returned;
    e["truncated"] = c.truncated;
    e["delivered"] = c.delivered;
    j["tool_calls"].push_back(std::move(e));
  }
  j["endpoint_calls"] = ordered_json::array();
  for (const auto& c : t.endpoint_calls) {
    ordered_json e;
    e["turn"] = c.turn;
    e["attempts"] = c.attempts;
    if (c.usage)
      e["usage"] = ordered_json{{"prompt_tokens", c.usage->prompt_tokens}, {"completion_tokens", c.usage->completion_tokens}};
    else
      e["usage"] = nullptr;
    j["endpoint_calls"].push_back(std::move(e));
  }
  return j;
}

EpisodeTranscript transcript_from_json(const json& j) {
  EpisodeTranscript t;
  t.question_id = j.at("question_id").get<std::string>();
  auto term = parse_termination(j.at("termination").get<std::string>());
  if (!term) throw std::invalid_argument("transcript: unknown termination '" + j.at("termination").get<std::string>() + "'");
  t.termination = *term;
  if (!j.at("final_answer").is_null()) t.final_answer = j.at("final_answer").get<std::vector<std::string>>();
  t.turns = j.at("turns").get<int>();
  t.template_tokens = j.value("template_tokens", std::int64_t{0});
  t.completion_tokens = j.value("completion_tokens", std::int64_t{0});
  t.tool_tokens = j.value("tool_tokens", std::int64_t{0});
  t.total_tokens = j.at("total_tokens").get<std::int64_t>();
  t.error = j.value("error", "");
  for (const auto& m : j.value("messages", json::array()))
    t.messages.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>(),
                          m.value("tokens", std::int64_t{0})});
  for (const auto& c : j.value("tool_calls", json::array()))
    t.tool_calls.push_back({c.at("turn").get<int>(), c.at("name").get<std::string>(), c.value("arguments", json::object()),
                            c.value("ok", false), c.value("rows_returned", std::size_t{0}), c.value("truncated", false),
                            c.value("delivered", true)});
  for (const auto& c : j.value("endpoint_calls", json::array())) {
    EndpointCallLog log{c.at("turn").get<int>(), c.value("attempts", 1), std::nullopt};
    if (c.contains("usage") && c["usage"].is_object())
      log.usage = Usage{c["usage"].at("prompt_tokens").get<std::int64_t>(),
                        c["usage"].at("completion_tokens").get<std::int64_t>()};
    t.endpoint_calls.push_back(log);
  }
  return t;
}

void write_transcripts(const std::filesystem::path& path, const std::vector<EpisodeTranscript>& transcripts) {
  std::string out;
  for (const auto& t : transcripts) {
    out += transcript_to_json(t).dump(-1, ' ', false, json::error_handler_t::replace);
    out.push_back('\n');
  }
  write_file(path.string(), out);
}

std::vector<EpisodeTranscript> read_transcripts(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open transcripts " + path.string());
  std::vector<EpisodeTranscript> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(transcript_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::invalid_argument("transcripts line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<QaExample> sample_questions(std::vector<QaExample> questions, std::size_t n, std::uint64_t seed) {
  std::sort(questions.begin(), questions.end(),
            [](const QaExample& a, const QaExample& b) { return a.question_id < b.question_id; });
  std::mt19937_64 gen(seed);
  auto bounded = [&gen](std::uint64_t bound) {
    std::uint64_t threshold = (0 - bound) % bound;
    while (true) {
      auto r = gen();
      if (r >= threshold) return r % bound;
    }
  };
  for (std::size_t i = questions.size(); i > 1; --i) std::swap(questions[i - 1], questions[bounded(i)]);
  if (n < questions.size()) questions.resize(n);
  return questions;
}

}  // namespace tableqa
