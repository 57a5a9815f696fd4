#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tableqa/endpoint.hpp"
#include "tableqa/retrieval.hpp"
#include "tableqa/sql_sandbox.hpp"
#include "tableqa/tools.hpp"

namespace httplib {
class Server;
}

namespace tableqa {

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path corpus_db;
  Bm25Params index;
  SandboxLimits limits;
  std::size_t max_request_bytes = 1 << 20;
  int default_top_k = kDefaultTopK;

  void validate() const;
};

/// Parses "host:port" or ":port". Throws std::invalid_argument.
std::pair<std::string, int> parse_bind_address(std::string_view text);

struct ServiceReply {
  int status = 200;
  nlohmann::ordered_json body;
};

/// Request handlers, independent of the HTTP transport. A body that is not
/// a JSON object or has a field of the wrong type gets status 400 and
/// `{"ok": false, "error": ..., "field": ...}`.
ServiceReply handle_search_request(const LocalTools& tools, std::string_view body, int default_top_k = kDefaultTopK);
ServiceReply handle_sql_request(const LocalTools& tools, std::string_view body);

/// Background HTTP server. Routes are registered by the concrete servers.
class HttpService {
 public:
  HttpService();
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  /// Binds and starts serving on a worker thread; returns the bound port.
  /// Throws std::runtime_error when the address cannot be bound.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop() is called.
  void run(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 protected:
  httplib::Server& server() { return *server_; }

 private:
  int bind(const std::string& host, int port);

  std::unique_ptr<httplib::Server> server_;
  std::thread worker_;
  int port_ = 0;
};

/// POST /tools/search, POST /tools/code_interpreter, GET /healthz.
class ToolServer : public HttpService {
 public:
  ToolServer(const LocalTools& tools, const ServerConfig& cfg);
};

/// OpenAI-style POST /v1/chat/completions backed by any endpoint, usually a
/// ScriptedEndpoint.
class MockLlmServer : public HttpService {
 public:
  explicit MockLlmServer(LlmEndpoint& backend);
};

/// Sends validated tool calls to a ToolServer. Transport failures come back
/// as ok=false results so the episode can continue.
class RemoteTools : public ToolDispatcher {
 public:
  explicit RemoteTools(std::string base_url, int default_top_k = kDefaultTopK, int timeout_seconds = 30);

  ToolResult dispatch(const protocol::ToolCallRequest& call) const override;

 private:
  ToolResult post(const std::string& path, const nlohmann::json& body) const;

  std::string base_url_;
  int default_top_k_;
  int timeout_seconds_;
};

struct InputDigest {
  std::string path;
  std::string digest;
};

struct RunManifest {
  std::string run_id;
  std::string command;
  nlohmann::ordered_json config;
  std::vector<InputDigest> inputs;
  std::vector<InputDigest> outputs;
  std::string started_at;  // UTC, ISO 8601
  double wall_seconds = 0.0;
};

/// FNV-1a digest of a file's bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

/// Content-addressed: the same command, config and input bytes give the
/// same id.
std::string make_run_id(const std::string& command, const nlohmann::ordered_json& config,
                        const std::vector<InputDigest>& inputs);

std::string utc_timestamp();

nlohmann::ordered_json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::ordered_json& j);
void write_manifest(const std::filesystem::path& path, const RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& path);

}  // namespace tableqa
