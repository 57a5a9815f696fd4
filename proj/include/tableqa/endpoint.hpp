#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace tableqa {

struct ChatMessage {
  std::string role;  // system | user | assistant | tool
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  bool operator==(const Usage&) const = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  int max_tokens = 2048;
  double temperature = 0.0;
};

struct ChatCompletion {
  std::string content;
  std::optional<Usage> usage;
};

/// Transport-level failure: unreachable host, non-2xx status, unparseable
/// body. Model misbehaviour is never reported this way.
class EndpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A chat-completion backend. Implementations must be safe to call from
/// several threads at once.
class LlmEndpoint {
 public:
  virtual ~LlmEndpoint() = default;
  virtual ChatCompletion complete(const ChatRequest& request) = 0;
};

nlohmann::json chat_request_to_json(const ChatRequest& request);
ChatRequest chat_request_from_json(const nlohmann::json& body);

/// Accepts either the OpenAI shape (`choices[0].message.content`) or a flat
/// `{"content": ...}` object; `usage` is optional in both.
ChatCompletion parse_chat_response(const nlohmann::json& body);
nlohmann::json chat_completion_to_json(const ChatCompletion& completion);

/// POSTs the request JSON to a plain-HTTP URL, e.g.
/// "http://127.0.0.1:8000/v1/chat/completions". A bearer token is sent when
/// `api_key` is non-empty.
class HttpEndpoint : public LlmEndpoint {
 public:
  explicit HttpEndpoint(std::string url, std::string api_key = {}, int timeout_seconds = 300);

  ChatCompletion complete(const ChatRequest& request) override;

 private:
  std::string scheme_host_port_;
  std::string path_;
  std::string api_key_;
  int timeout_seconds_;
};

/// Replays canned assistant responses. A script is selected by the question
/// text in the user prompt (or the "*" wildcard); the response index is the
/// number of assistant messages already in the conversation.
///
/// Fixture lines: `{"question": str, "responses": [str | {"content": str,
/// "usage": {...}}], "repeat_last": bool}`.
class ScriptedEndpoint : public LlmEndpoint {
 public:
  struct Script {
    std::vector<ChatCompletion> responses;
    bool repeat_last = false;
  };

  ScriptedEndpoint() = default;
  static ScriptedEndpoint from_file(const std::filesystem::path& path);

  void add_script(std::string question, Script script);
  ChatCompletion complete(const ChatRequest& request) override;

 private:
  std::map<std::string, Script> scripts_;
};

/// Extracts the text after the final "**Question**: " marker of the first
/// user message.
std::optional<std::string> question_from_messages(const std::vector<ChatMessage>& messages);

}  // namespace tableqa
