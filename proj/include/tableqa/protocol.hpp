#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tableqa/sql_sandbox.hpp"

namespace tableqa::protocol {

struct ParameterSpec {
  std::string name;
  std::string type;
  std::string description;
  std::optional<nlohmann::json> default_value;
  bool required = false;
};

/// A function signature listed inside <tools></tools>. `parameters` is
/// nullopt for tools whose schema advertises `"parameters": null`.
struct ToolSchema {
  std::string name;
  std::string description;
  std::optional<std::vector<ParameterSpec>> parameters;
};

/// The two tools the agent sees: `code_interpreter` and `search`.
std::vector<ToolSchema> default_tool_schemas();

/// One line of the <tools> block, key order and separators as in the
/// reference prompt (`{"type": "function", "function": {...}}`).
std::string render_tool_schema(const ToolSchema& schema);

std::string render_system_prompt(const std::vector<ToolSchema>& schemas);

/// Throws std::invalid_argument for an empty question.
std::string render_user_prompt(std::string_view question);

inline constexpr std::string_view kCodePlaceholder = "code";

struct ToolCallRequest {
  std::string name;
  nlohmann::json arguments = nlohmann::json::object();
  std::optional<std::string> code_block;

  bool operator==(const ToolCallRequest&) const = default;
};

struct ParseDiagnostic {
  std::size_t offset;
  std::string reason;
};

struct ParsedAssistantTurn {
  std::vector<ToolCallRequest> tool_calls;
  std::optional<std::vector<std::string>> final_answer;
  std::string free_text;
  std::vector<ParseDiagnostic> diagnostics;
};

/// Total over arbitrary input; malformed spans become diagnostics.
ParsedAssistantTurn parse_assistant_message(std::string_view text);

/// Inverse of parse_assistant_message for one request. JSON is emitted with
/// every '<' written as <, and code goes through escape_tagged_text().
std::string serialize_tool_call(const ToolCallRequest& request);

/// Escaping for free text placed between protocol tags: every `<` that is
/// followed by zero or more backslashes and then `/` gains one extra
/// backslash. The output never contains "</", and unescape_tagged_text()
/// undoes it exactly.
std::string escape_tagged_text(std::string_view text);
std::string unescape_tagged_text(std::string_view text);

/// `<tool_response>\n{escaped payload}\n</tool_response>` per result, joined
/// with '\n' in call order.
std::string render_tool_response(const std::vector<std::pair<std::string, ToolResult>>& results);

/// Recovers the payloads from render_tool_response() output.
std::vector<std::string> parse_tool_response(std::string_view message);

/// Splits `<answer>` contents on commas and trims each item. Empty content
/// yields no items.
std::vector<std::string> split_answer_items(std::string_view contents);

}  // namespace tableqa::protocol
