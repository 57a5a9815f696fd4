#include "tableqa/protocol.hpp"

#include <stdexcept>

#include "tableqa/retrieval.hpp"
#include "tableqa/text.hpp"

namespace tableqa::protocol {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::string_view kSystemHead =
    "You are Qwen, created by Alibaba Cloud. You are a helpful assistant.\n"
    "\n"
    "# Tools\n"
    "\n"
    "You may call one or more functions to assist with the user query.\n"
    "\n"
    "You are provided with function signatures within <tools></tools> XML tags:\n"
    "<tools>\n";

constexpr std::string_view kSystemTail =
    "</tools>\n"
    "\n"
    "For each function call, return a json object with function name and arguments within "
    "<tool_call></tool_call> XML tags:\n"
    "<tool_call>\n"
    "{\"name\": <function-name>, \"arguments\": <args-json-object>}\n"
    "</tool_call>\n"
    "For code parameters, use placeholders first, and then put the code within <code></code> XML tags, such as:\n"
    "<tool_call>\n"
    "{\"name\": <function-name>, \"arguments\": {\"code\": \"\"}}\n"
    "<code>\n"
    "Here is the code.\n"
    "</code>\n"
    "</tool_call>";

constexpr std::string_view kUserHead =
    "You are tasked with solving an open-domain table question answering problem. You must use tools to search "
    "for tables and execute SQL queries to find the answer. Follow the instructions below carefully:\n"
    "\n"
    "- Always use the table name you searched as the target of your SQL queries.\n"
    "- Set a proper `top_k` value to cover enough candidates and avoid omitting possible tables.\n"
    "- Some tables have the similar schema with the same schema types. You can set proper `top_k` to access them "
    "and union them together help you better get the answer.\n"
    "- Always perform both search and SQL steps, even if you \"know\" the answer, to ensure correctness.\n"
    "- You may invoke tools in any order or combination until you have confidence in your result.\n"
    "- The answer should be either a single item or a list of items. When you have the final answer, format it "
    "exactly as `<answer>item1,item2,\xE2\x80\xA6</answer>` with no extra words or punctuation.\n"
    "\n"
    "**Question**: ";

constexpr std::string_view kToolCallOpen = "<tool_call>";
constexpr std::string_view kToolCallClose = "</tool_call>";
constexpr std::string_view kCodeOpen = "<code>";
constexpr std::string_view kCodeClose = "</code>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";
constexpr std::string_view kResponseOpen = "<tool_response>\n";
constexpr std::string_view kResponseClose = "\n</tool_response>";

// json.dumps-style rendering: ", " and ": " separators, insertion order.
void dump_spaced(const ordered_json& j, std::string& out) {
  if (j.is_object()) {
    out.push_back('{');
    bool first = true;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!first) out += ", ";
      first = false;
      out += json(it.key()).dump();
      out += ": ";
      dump_spaced(it.value(), out);
    }
    out.push_back('}');
  } else if (j.is_array()) {
    out.push_back('[');
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (i) out += ", ";
      dump_spaced(j[i], out);
    }
    out.push_back(']');
  } else {
    out += j.dump();
  }
}

std::string strip_outer_newlines(std::string_view s) {
  if (!s.empty() && s.front() == '\n') s.remove_prefix(1);
  if (!s.empty() && s.back() == '\n') s.remove_suffix(1);
  return std::string(s);
}

bool all_whitespace(std::string_view s) { return trim(s).empty(); }

// Parses the body of one <tool_call> span. Returns nullopt and fills
// `reason` when the span is malformed.
std::optional<ToolCallRequest> parse_tool_call_body(std::string_view body, std::string& reason) {
  std::string_view json_part = body;
  std::optional<std::string> code;
  if (auto open = body.find(kCodeOpen); open != std::string_view::npos) {
    json_part = body.substr(0, open);
    auto start = open + kCodeOpen.size();
    auto close = body.find(kCodeClose, start);
    if (close == std::string_view::npos) {
      reason = "unterminated <code> block";
      return std::nullopt;
    }
    if (!all_whitespace(body.substr(close + kCodeClose.size()))) {
      reason = "unexpected text after </code>";
      return std::nullopt;
    }
    code = unescape_tagged_text(strip_outer_newlines(body.substr(start, close - start)));
  }
  json parsed;
  try {
    parsed = json::parse(trim(json_part));
  } catch (const json::parse_error& e) {
    reason = std::string("invalid tool call JSON: ") + e.what();
    return std::nullopt;
  }
  if (!parsed.is_object()) {
    reason = "tool call JSON is not an object";
    return std::nullopt;
  }
  auto name = parsed.find("name");
  if (name == parsed.end() || !name->is_string() || name->get<std::string>().empty()) {
    reason = "tool call lacks a string \"name\"";
    return std::nullopt;
  }
  ToolCallRequest req;
  req.name = name->get<std::string>();
  if (auto args = parsed.find("arguments"); args != parsed.end() && !args->is_null()) {
    if (!args->is_object()) {
      reason = "tool call \"arguments\" is not an object";
      return std::nullopt;
    }
    req.arguments = *args;
  }
  if (code) {
    req.arguments[std::string(kCodePlaceholder)] = *code;
    req.code_block = std::move(code);
  }
  return req;
}

}  // namespace

std::vector<ToolSchema> default_tool_schemas() {
  return {
      ToolSchema{"code_interpreter", "SQL code interpreter", std::nullopt},
      ToolSchema{"search",
                 "use key words to get a list of tables.",
                 std::vector<ParameterSpec>{
                     {"keywords", "str", "key words used for searching (sentence is accepted).", std::nullopt, true},
                     {"top_k", "int", "top k tables to return.", json(kDefaultTopK), false},
                 }},
  };
}

std::string render_tool_schema(const ToolSchema& schema) {
  ordered_json fn;
  fn["name"] = schema.name;
  fn["description"] = schema.description;
  if (!schema.parameters) {
    fn["parameters"] = nullptr;
  } else {
    ordered_json params;
    params["type"] = "object";
    ordered_json props = ordered_json::object();
    ordered_json required = ordered_json::array();
    for (const auto& p : *schema.parameters) {
      ordered_json prop;
      prop["type"] = p.type;
      prop["description"] = p.description;
      if (p.default_value) prop["default"] = *p.default_value;
      props[p.name] = std::move(prop);
      if (p.required) required.push_back(p.name);
    }
    params["properties"] = std::move(props);
    params["required"] = std::move(required);
    fn["parameters"] = std::move(params);
  }
  ordered_json outer;
  outer["type"] = "function";
  outer["function"] = std::move(fn);
  std::string out;
  dump_spaced(outer, out);
  return out;
}

std::string render_system_prompt(const std::vector<ToolSchema>& schemas) {
  std::string out(kSystemHead);
  for (const auto& s : schemas) {
    out += render_tool_schema(s);
    out.push_back('\n');
  }
  out += kSystemTail;
  return out;
}

std::string render_user_prompt(std::string_view question) {
  if (question.empty()) throw std::invalid_argument("user prompt: question must be non-empty");
  std::string out(kUserHead);
  out += question;
  return out;
}

std::string escape_tagged_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    out.push_back(text[i]);
    if (text[i] != '<') continue;
    std::size_t j = i + 1;
    while (j < text.size() && text[j] == '\\') ++j;
    if (j < text.size() && text[j] == '/') out.push_back('\\');
  }
  return out;
}

std::string unescape_tagged_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    out.push_back(text[i]);
    if (text[i] != '<') continue;
    std::size_t j = i + 1;
    while (j < text.size() && text[j] == '\\') ++j;
    if (j > i + 1 && j < text.size() && text[j] == '/') ++i;  // drop one backslash
  }
  return out;
}

std::vector<std::string> split_answer_items(std::string_view contents) {
  std::vector<std::string> items;
  if (trim(contents).empty()) return items;
  for (auto& part : split(contents, ',')) items.push_back(trim(part));
  return items;
}

ParsedAssistantTurn parse_assistant_message(std::string_view text) {
  ParsedAssistantTurn turn;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto call = text.find(kToolCallOpen, pos);
    auto answer = text.find(kAnswerOpen, pos);
    auto next = std::min(call, answer);
    if (next == std::string_view::npos) break;
    turn.free_text += text.substr(pos, next - pos);

    bool is_call = next == call;
    auto open_len = is_call ? kToolCallOpen.size() : kAnswerOpen.size();
    auto close_tag = is_call ? kToolCallClose : kAnswerClose;
    auto close = text.find(close_tag, next + open_len);
    if (close == std::string_view::npos) {
      turn.diagnostics.push_back({next, is_call ? "unterminated <tool_call>" : "unterminated <answer>"});
      turn.free_text += text.substr(next, open_len);
      pos = next + open_len;
      continue;
    }
    auto body = text.substr(next + open_len, close - next - open_len);
    if (is_call) {
      std::string reason;
      if (auto req = parse_tool_call_body(body, reason)) turn.tool_calls.push_back(std::move(*req));
      else turn.diagnostics.push_back({next, std::move(reason)});
    } else {
      turn.final_answer = split_answer_items(body);
    }
    pos = close + close_tag.size();
  }
  if (pos < text.size()) turn.free_text += text.substr(pos);
  return turn;
}

std::string serialize_tool_call(const ToolCallRequest& request) {
  json args = request.arguments.is_object() ? request.arguments : json::object();
  if (request.code_block) args[std::string(kCodePlaceholder)] = "";
  ordered_json head;
  head["name"] = request.name;
  head["arguments"] = std::move(args);
  auto dumped = head.dump(-1, ' ', false, json::error_handler_t::replace);
  std::string safe;
  safe.reserve(dumped.size());
  for (char c : dumped) {
    if (c == '<') safe += "\\u003c";
    else safe.push_back(c);
  }
  std::string out(kToolCallOpen);
  out += "\n" + safe + "\n";
  if (request.code_block) {
    out += kCodeOpen;
    out += "\n" + escape_tagged_text(*request.code_block) + "\n";
    out += kCodeClose;
    out += "\n";
  }
  out += kToolCallClose;
  return out;
}

std::string render_tool_response(const std::vector<std::pair<std::string, ToolResult>>& results) {
  std::string out;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (i) out.push_back('\n');
    out += kResponseOpen;
    out += escape_tagged_text(results[i].second.payload);
    out += kResponseClose;
  }
  return out;
}

std::vector<std::string> parse_tool_response(std::string_view message) {
  std::vector<std::string> payloads;
  std::size_t pos = 0;
  while (true) {
    auto open = message.find(kResponseOpen, pos);
    if (open == std::string_view::npos) break;
    auto start = open + kResponseOpen.size();
    auto close = message.find(kResponseClose, start);
    if (close == std::string_view::npos) break;
    payloads.push_back(unescape_tagged_text(message.substr(start, close - start)));
    pos = close + kResponseClose.size();
  }
  return payloads;
}

}  // namespace tableqa::protocol
