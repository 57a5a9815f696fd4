#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "support.hpp"
#include "tableqa/protocol.hpp"

using namespace tableqa;
using namespace tableqa::protocol;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ToolResult ok(std::string payload) { return ToolResult{true, std::move(payload), 0, false}; }

}  // namespace

TEST_CASE("system prompt matches the golden file byte for byte") {
  CHECK(render_system_prompt(default_tool_schemas()) == slurp(testing::golden_path("system_prompt.txt")));
}

TEST_CASE("system prompt with no schemas or reordered schemas") {
  auto empty = render_system_prompt({});
  CHECK(empty.find("<tools>\n</tools>\n") != std::string::npos);
  auto schemas = default_tool_schemas();
  std::swap(schemas[0], schemas[1]);
  auto swapped = render_system_prompt(schemas);
  auto base = render_system_prompt(default_tool_schemas());
  CHECK(swapped.size() == base.size());
  auto a = render_tool_schema(schemas[0]), b = render_tool_schema(schemas[1]);
  CHECK(swapped.find(a + "\n" + b + "\n</tools>") != std::string::npos);
  CHECK(base.find(b + "\n" + a + "\n</tools>") != std::string::npos);
}

TEST_CASE("code_interpreter advertises null parameters") {
  auto schemas = default_tool_schemas();
  CHECK(render_tool_schema(schemas[0]) ==
        R"({"type": "function", "function": {"name": "code_interpreter", "description": "SQL code interpreter", "parameters": null}})");
  CHECK(json::parse(render_tool_schema(schemas[1]))["function"]["parameters"]["properties"]["top_k"]["default"] == 8);
}

TEST_CASE("user prompt") {
  auto p = render_user_prompt("Who won in 1996?");
  CHECK(p == slurp(testing::golden_path("user_prompt_who_won_1996.txt")));
  auto q = render_user_prompt("line one\nline two");
  CHECK(q.substr(q.size() - 17) == "line one\nline two");
  auto r = render_user_prompt("Who won in 1997?");
  CHECK(r.size() == p.size());
  std::size_t diffs = 0;
  for (std::size_t i = 0; i < p.size(); ++i) diffs += p[i] != r[i];
  CHECK(diffs == 1);
  CHECK_THROWS_AS(render_user_prompt(""), std::invalid_argument);
}

TEST_CASE("parse a search call") {
  auto turn = parse_assistant_message(
      "Let me look.\n<tool_call>\n{\"name\":\"search\",\"arguments\":{\"keywords\":\"olympics host city\",\"top_k\":8}}\n"
      "</tool_call>");
  REQUIRE(turn.tool_calls.size() == 1);
  CHECK(turn.tool_calls[0].name == "search");
  CHECK(turn.tool_calls[0].arguments == json{{"keywords", "olympics host city"}, {"top_k", 8}});
  CHECK_FALSE(turn.tool_calls[0].code_block);
  CHECK_FALSE(turn.final_answer);
  CHECK(turn.free_text == "Let me look.\n");
  CHECK(turn.diagnostics.empty());
}

TEST_CASE("parse a code call substitutes the placeholder") {
  auto turn = parse_assistant_message(
      "<tool_call>\n{\"name\": \"code_interpreter\", \"arguments\": {\"code\": \"\"}}\n<code>\nSELECT *\nFROM t\n</code>\n"
      "</tool_call>");
  REQUIRE(turn.tool_calls.size() == 1);
  CHECK(turn.tool_calls[0].code_block == std::optional<std::string>("SELECT *\nFROM t"));
  CHECK(turn.tool_calls[0].arguments["code"] == "SELECT *\nFROM t");
}

TEST_CASE("tag-free text") {
  auto turn = parse_assistant_message("just thinking < > / out loud");
  CHECK(turn.tool_calls.empty());
  CHECK_FALSE(turn.final_answer);
  CHECK(turn.free_text == "just thinking < > / out loud");
  CHECK(turn.diagnostics.empty());
}

TEST_CASE("malformed spans become diagnostics without poisoning the turn") {
  auto turn = parse_assistant_message(
      "<tool_call>\n{\"name\": \"search\"} trailing\n</tool_call>"
      "<tool_call>{\"arguments\": {}}</tool_call>"
      "<tool_call>[1]</tool_call>"
      "<tool_call>{\"name\": \"search\", \"arguments\": 3}</tool_call>"
      "<tool_call>{\"name\": \"code_interpreter\", \"arguments\": {\"code\": \"\"}}<code>x</tool_call>"
      "<tool_call>\n{\"name\": \"search\", \"arguments\": {\"keywords\": \"ok\"}}\n</tool_call>"
      "<tool_call>never closed");
  REQUIRE(turn.tool_calls.size() == 1);
  CHECK(turn.tool_calls[0].arguments["keywords"] == "ok");
  CHECK(turn.diagnostics.size() == 6);
  for (std::size_t i = 1; i < turn.diagnostics.size(); ++i) CHECK(turn.diagnostics[i - 1].offset < turn.diagnostics[i].offset);
}

TEST_CASE("answers: last span wins, items comma-split and trimmed") {
  auto turn = parse_assistant_message("<answer>first</answer> then <answer> Atlanta , Sydney,Barcelona </answer>");
  REQUIRE(turn.final_answer);
  CHECK(*turn.final_answer == std::vector<std::string>{"Atlanta", "Sydney", "Barcelona"});
  auto empty = parse_assistant_message("<answer>  </answer>");
  REQUIRE(empty.final_answer);
  CHECK(empty.final_answer->empty());
  CHECK_FALSE(parse_assistant_message("<answer>open only").final_answer);
  auto both = parse_assistant_message("<tool_call>{\"name\":\"search\",\"arguments\":{}}</tool_call><answer>x</answer>");
  CHECK(both.tool_calls.size() == 1);
  CHECK(both.final_answer == std::optional<std::vector<std::string>>({"x"}));
}

TEST_CASE("answer extraction property") {
  std::mt19937_64 rng(17);
  const std::vector<std::string> words = {"a", "b c", " d ", "1996", "caf\xC3\xA9", ""};
  for (int round = 0; round < 300; ++round) {
    int k = 1 + static_cast<int>(rng() % 4);
    std::string text, last;
    for (int i = 0; i < k; ++i) {
      std::string contents;
      int items = 1 + static_cast<int>(rng() % 3);
      for (int j = 0; j < items; ++j) contents += (j ? "," : "") + testing::random_word(rng, words);
      text += "noise " + testing::random_word(rng, words) + "<answer>" + contents + "</answer>";
      last = contents;
    }
    auto turn = parse_assistant_message(text);
    REQUIRE(turn.final_answer);
    std::vector<std::string> want;
    if (!trim(last).empty())
      for (const auto& piece : split(last, ',')) want.push_back(trim(piece));
    CHECK(*turn.final_answer == want);
  }
}

TEST_CASE("serialize examples") {
  ToolCallRequest search{"search", json{{"keywords", "olympics"}, {"top_k", 3}}, std::nullopt};
  auto s = serialize_tool_call(search);
  CHECK(s.find("<code>") == std::string::npos);
  CHECK(s == "<tool_call>\n{\"name\":\"search\",\"arguments\":{\"keywords\":\"olympics\",\"top_k\":3}}\n</tool_call>");
  auto back = parse_assistant_message(s);
  REQUIRE(back.tool_calls.size() == 1);
  CHECK(back.tool_calls[0] == search);

  ToolCallRequest sql{"code_interpreter", json{{"code", "SELECT a\nFROM t\nWHERE b = '</code>'"}},
                      std::string("SELECT a\nFROM t\nWHERE b = '</code>'")};
  auto text = serialize_tool_call(sql);
  CHECK(text.find("'</code>'") == std::string::npos);
  auto round = parse_assistant_message(text);
  REQUIRE(round.tool_calls.size() == 1);
  CHECK(round.tool_calls[0] == sql);
}

TEST_CASE("escaping is invertible and removes closing-tag openers") {
  for (const char* s : {"", "</x>", "<\\/x>", "<\\\\/", "a<b", "<", "\\", "<<//", "</tool_response>"}) {
    auto e = escape_tagged_text(s);
    CHECK(e.find("</") == std::string::npos);
    CHECK(unescape_tagged_text(e) == s);
  }
  CHECK(escape_tagged_text("</a>") == "<\\/a>");
  CHECK(escape_tagged_text("<\\/a>") == "<\\\\/a>");
  CHECK(escape_tagged_text("<a>") == "<a>");
  std::mt19937_64 rng(23);
  for (int i = 0; i < 2000; ++i) {
    auto s = testing::random_tagged_text(rng, 30);
    auto e = escape_tagged_text(s);
    REQUIRE(e.find("</") == std::string::npos);
    REQUIRE(unescape_tagged_text(e) == s);
  }
}

TEST_CASE("tool responses") {
  CHECK(render_tool_response({{"code_interpreter", ok("Atlanta")}}) == "<tool_response>\nAtlanta\n</tool_response>");
  auto two = render_tool_response({{"search", ok("one")}, {"code_interpreter", ok("two")}});
  CHECK(two == "<tool_response>\none\n</tool_response>\n<tool_response>\ntwo\n</tool_response>");
  CHECK(parse_tool_response(two) == std::vector<std::string>{"one", "two"});
  std::mt19937_64 rng(29);
  for (int i = 0; i < 500; ++i) {
    std::vector<std::pair<std::string, ToolResult>> results;
    std::vector<std::string> payloads;
    for (int j = 0, n = 1 + static_cast<int>(rng() % 3); j < n; ++j) {
      payloads.push_back(testing::random_tagged_text(rng, 15));
      results.emplace_back("search", ok(payloads.back()));
    }
    REQUIRE(parse_tool_response(render_tool_response(results)) == payloads);
  }
}

TEST_CASE("parse after serialize is the identity on random requests") {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 1000; ++i) {
    auto req = testing::random_tool_call(rng);
    auto turn = parse_assistant_message(serialize_tool_call(req));
    REQUIRE(turn.diagnostics.empty());
    REQUIRE(turn.tool_calls.size() == 1);
    REQUIRE(turn.tool_calls[0] == req);
  }
}

TEST_CASE("several calls in one message keep their order") {
  std::mt19937_64 rng(37);
  for (int i = 0; i < 200; ++i) {
    std::vector<ToolCallRequest> reqs;
    std::string text;
    for (int j = 0, n = 1 + static_cast<int>(rng() % 4); j < n; ++j) {
      reqs.push_back(testing::random_tool_call(rng));
      text += "step " + std::to_string(j) + "\n" + serialize_tool_call(reqs.back()) + "\n";
    }
    auto turn = parse_assistant_message(text);
    REQUIRE(turn.tool_calls == reqs);
  }
}

TEST_CASE("parser is total over random strings") {
  std::mt19937_64 rng(41);
  for (int i = 0; i < 5000; ++i) {
    std::string s = testing::random_tagged_text(rng, 40);
    if (i % 3 == 0)
      for (auto& c : s)
        if (rng() % 7 == 0) c = static_cast<char>(rng() % 256);
    ParsedAssistantTurn turn;
    CHECK_NOTHROW(turn = parse_assistant_message(s));
    CHECK(turn.free_text.size() <= s.size());
  }
}
