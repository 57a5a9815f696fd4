#include "tableqa/endpoint.hpp"

#include <fstream>

#include <httplib.h>

#include "tableqa/text.hpp"

namespace tableqa {

using nlohmann::json;

namespace {

std::optional<Usage> parse_usage(const json& body) {
  auto it = body.find("usage");
  if (it == body.end() || !it->is_object()) return std::nullopt;
  auto p = it->find("prompt_tokens");
  auto c = it->find("completion_tokens");
  if (p == it->end() || c == it->end() || !p->is_number_integer() || !c->is_number_integer()) return std::nullopt;
  return Usage{p->get<std::int64_t>(), c->get<std::int64_t>()};
}

ChatCompletion completion_from_fixture(const json& item) {
  if (item.is_string()) return {item.get<std::string>(), std::nullopt};
  if (item.is_object() && item.contains("content") && item["content"].is_string())
    return {item["content"].get<std::string>(), parse_usage(item)};
  throw std::invalid_argument("scripted endpoint: response must be a string or {\"content\": str}");
}

}  // namespace

json chat_request_to_json(const ChatRequest& request) {
  nlohmann::ordered_json j;
  j["model"] = request.model;
  j["messages"] = nlohmann::ordered_json::array();
  for (const auto& m : request.messages) j["messages"].push_back({{"role", m.role}, {"content", m.content}});
  j["max_tokens"] = request.max_tokens;
  j["temperature"] = request.temperature;
  return json::parse(j.dump());
}

ChatRequest chat_request_from_json(const json& body) {
  if (!body.is_object() || !body.contains("messages") || !body["messages"].is_array())
    throw std::invalid_argument("chat request: \"messages\" must be an array");
  ChatRequest req;
  req.model = body.value("model", "");
  for (const auto& m : body["messages"]) {
    if (!m.is_object() || !m.contains("role") || !m.contains("content") || !m["role"].is_string() ||
        !m["content"].is_string())
      throw std::invalid_argument("chat request: each message needs string \"role\" and \"content\"");
    req.messages.push_back({m["role"].get<std::string>(), m["content"].get<std::string>()});
  }
  if (body.contains("max_tokens") && body["max_tokens"].is_number_integer()) req.max_tokens = body["max_tokens"];
  if (body.contains("temperature") && body["temperature"].is_number()) req.temperature = body["temperature"];
  return req;
}

ChatCompletion parse_chat_response(const json& body) {
  if (!body.is_object()) throw EndpointError("endpoint response is not a JSON object");
  ChatCompletion out;
  out.usage = parse_usage(body);
  if (auto choices = body.find("choices"); choices != body.end()) {
    if (!choices->is_array() || choices->empty()) throw EndpointError("endpoint response has no choices");
    const auto& first = (*choices)[0];
    if (first.contains("message") && first["message"].contains("content") && first["message"]["content"].is_string()) {
      out.content = first["message"]["content"].get<std::string>();
      return out;
    }
    if (first.contains("text") && first["text"].is_string()) {
      out.content = first["text"].get<std::string>();
      return out;
    }
    throw EndpointError("endpoint response choice has no message content");
  }
  if (auto content = body.find("content"); content != body.end() && content->is_string()) {
    out.content = content->get<std::string>();
    return out;
  }
  throw EndpointError("endpoint response carries no assistant text");
}

json chat_completion_to_json(const ChatCompletion& completion) {
  json j = {{"choices", json::array({{{"index", 0},
                                      {"message", {{"role", "assistant"}, {"content", completion.content}}},
                                      {"finish_reason", "stop"}}})}};
  if (completion.usage)
    j["usage"] = {{"prompt_tokens", completion.usage->prompt_tokens},
                  {"completion_tokens", completion.usage->completion_tokens},
                  {"total_tokens", completion.usage->prompt_tokens + completion.usage->completion_tokens}};
  return j;
}

HttpEndpoint::HttpEndpoint(std::string url, std::string api_key, int timeout_seconds)
    : api_key_(std::move(api_key)), timeout_seconds_(timeout_seconds) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("endpoint URL needs a scheme: " + url);
  if (url.compare(0, scheme_end, "http") != 0)
    throw std::invalid_argument("only plain http:// endpoints are supported: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

ChatCompletion HttpEndpoint::complete(const ChatRequest& request) {
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(10);
  client.set_read_timeout(timeout_seconds_);
  client.set_write_timeout(timeout_seconds_);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto res = client.Post(path_, headers, chat_request_to_json(request).dump(), "application/json");
  if (!res) throw EndpointError("endpoint transport error: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw EndpointError("endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  json body;
  try {
    body = json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw EndpointError(std::string("endpoint returned invalid JSON: ") + e.what());
  }
  return parse_chat_response(body);
}

std::optional<std::string> question_from_messages(const std::vector<ChatMessage>& messages) {
  static constexpr std::string_view marker = "**Question**: ";
  for (const auto& m : messages) {
    if (m.role != "user") continue;
    auto at = m.content.rfind(marker);
    if (at == std::string::npos) return std::nullopt;
    return m.content.substr(at + marker.size());
  }
  return std::nullopt;
}

ScriptedEndpoint ScriptedEndpoint::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open script " + path.string());
  ScriptedEndpoint ep;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument("script line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object() || !obj.contains("question") || !obj["question"].is_string() || !obj.contains("responses") ||
        !obj["responses"].is_array())
      throw std::invalid_argument("script line " + std::to_string(line_no) +
                                  ": expected {\"question\": str, \"responses\": [...]}");
    Script script;
    for (const auto& r : obj["responses"]) script.responses.push_back(completion_from_fixture(r));
    script.repeat_last = obj.value("repeat_last", false);
    ep.add_script(obj["question"].get<std::string>(), std::move(script));
  }
  return ep;
}

void ScriptedEndpoint::add_script(std::string question, Script script) {
  scripts_[std::move(question)] = std::move(script);
}

ChatCompletion ScriptedEndpoint::complete(const ChatRequest& request) {
  auto question = question_from_messages(request.messages);
  auto it = question ? scripts_.find(*question) : scripts_.end();
  if (it == scripts_.end()) it = scripts_.find("*");
  if (it == scripts_.end()) throw EndpointError("scripted endpoint: no script for question");
  std::size_t index = 0;
  for (const auto& m : request.messages)
    if (m.role == "assistant") ++index;
  const auto& responses = it->second.responses;
  if (index >= responses.size()) {
    if (!it->second.repeat_last || responses.empty()) throw EndpointError("scripted endpoint: script exhausted");
    index = responses.size() - 1;
  }
  return responses[index];
}

}  // namespace tableqa
