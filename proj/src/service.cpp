#include "tableqa/service.hpp"

#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>
#include <httplib.h>

#include "tableqa/corpus.hpp"
#include "tableqa/text.hpp"

namespace tableqa {

using ojson = nlohmann::ordered_json;

void ServerConfig::validate() const {
  if (host.empty()) throw std::invalid_argument("server: empty bind host");
  if (port < 0 || port > 65535) throw std::invalid_argument(fmt::format("server: port {} out of range", port));
  if (max_request_bytes == 0) throw std::invalid_argument("server: max_request_bytes must be positive");
  if (limits.row_cap == 0 || limits.char_cap == 0 || limits.timeout.count() <= 0)
    throw std::invalid_argument("server: sandbox limits must be positive");
  if (default_top_k < 1) throw std::invalid_argument("server: default_top_k must be >= 1");
  index.validate();
}

std::pair<std::string, int> parse_bind_address(std::string_view text) {
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos) throw std::invalid_argument("bind address must be host:port, got '" + std::string(text) + "'");
  std::string host(text.substr(0, colon));
  if (host.empty()) host = "127.0.0.1";
  auto digits = text.substr(colon + 1);
  int port = -1;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || port < 0 || port > 65535)
    throw std::invalid_argument("bad port in bind address '" + std::string(text) + "'");
  return {host, port};
}

namespace {

ServiceReply bad_request(std::string message, std::optional<std::string> field) {
  ojson body;
  body["ok"] = false;
  body["error"] = std::move(message);
  body["field"] = field ? ojson(*field) : ojson(nullptr);
  return {400, std::move(body)};
}

std::optional<nlohmann::json> parse_object(std::string_view body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

}  // namespace

ServiceReply handle_search_request(const LocalTools& tools, std::string_view body, int default_top_k) {
  auto j = parse_object(body);
  if (!j) return bad_request("request body must be a JSON object", std::nullopt);
  auto kw = j->find("keywords");
  if (kw == j->end()) return bad_request("missing required field", "keywords");
  if (!kw->is_string()) return bad_request("must be a string", "keywords");
  SearchArgs args{kw->get<std::string>(), default_top_k};
  if (auto k = j->find("top_k"); k != j->end() && !k->is_null()) {
    if (!k->is_number_integer()) return bad_request("must be an integer", "top_k");
    auto n = k->get<long long>();
    if (n < 1 || n > std::numeric_limits<int>::max()) return bad_request("must be a positive integer", "top_k");
    args.top_k = static_cast<int>(n);
  }
  auto r = tools.search(args);
  ojson out;
  out["ok"] = r.ok;
  out["payload"] = r.payload;
  out["rows_returned"] = r.rows_returned;
  return {200, std::move(out)};
}

ServiceReply handle_sql_request(const LocalTools& tools, std::string_view body) {
  auto j = parse_object(body);
  if (!j) return bad_request("request body must be a JSON object", std::nullopt);
  auto q = j->find("sql_query");
  if (q == j->end()) return bad_request("missing required field", "sql_query");
  if (!q->is_string()) return bad_request("must be a string", "sql_query");
  auto r = tools.sql({q->get<std::string>()});
  ojson out;
  out["ok"] = r.ok;
  out["payload"] = r.payload;
  out["truncated"] = r.truncated;
  out["rows_returned"] = r.rows_returned;
  return {200, std::move(out)};
}

HttpService::HttpService() : server_(std::make_unique<httplib::Server>()) {
  // SO_REUSEADDR only: the library default of SO_REUSEPORT lets a second
  // server share a port that is already taken.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  server_->set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(ojson{{"ok", false}, {"error", what}, {"field", nullptr}}.dump(), "application/json");
  });
}

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
    if (port_ < 0) throw std::runtime_error("cannot bind " + host);
  } else {
    if (!server_->bind_to_port(host, port)) throw std::runtime_error(fmt::format("cannot bind {}:{}", host, port));
    port_ = port;
  }
  return port_;
}

int HttpService::start(const std::string& host, int port) {
  bind(host, port);
  worker_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void HttpService::run(const std::string& host, int port) {
  bind(host, port);
  server_->listen_after_bind();
}

void HttpService::stop() {
  if (server_) server_->stop();
  if (worker_.joinable()) worker_.join();
}

namespace {

void send(httplib::Response& res, const ServiceReply& reply) {
  res.status = reply.status;
  res.set_content(reply.body.dump(), "application/json");
}

}  // namespace

ToolServer::ToolServer(const LocalTools& tools, const ServerConfig& cfg) {
  cfg.validate();
  auto& s = server();
  s.set_payload_max_length(cfg.max_request_bytes);
  int top_k = cfg.default_top_k;
  s.Post("/tools/search", [&tools, top_k](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_search_request(tools, req.body, top_k));
  });
  s.Post("/tools/code_interpreter", [&tools](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_sql_request(tools, req.body));
  });
  s.Get("/healthz", [&tools](const httplib::Request&, httplib::Response& res) {
    ojson body{{"status", "ok"}, {"tables", tools.corpus().num_tables()}};
    res.set_content(body.dump(), "application/json");
  });
}

MockLlmServer::MockLlmServer(LlmEndpoint& backend) {
  auto& s = server();
  s.Post("/v1/chat/completions", [&backend](const httplib::Request& req, httplib::Response& res) {
    auto j = nlohmann::json::parse(req.body, nullptr, false);
    ChatRequest request;
    try {
      if (j.is_discarded()) throw std::invalid_argument("body is not JSON");
      request = chat_request_from_json(j);
    } catch (const std::exception& e) {
      send(res, bad_request(e.what(), std::nullopt));
      return;
    }
    try {
      res.set_content(chat_completion_to_json(backend.complete(request)).dump(), "application/json");
    } catch (const EndpointError& e) {
      res.status = 500;
      res.set_content(ojson{{"error", e.what()}}.dump(), "application/json");
    }
  });
  s.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });
}

RemoteTools::RemoteTools(std::string base_url, int default_top_k, int timeout_seconds)
    : base_url_(std::move(base_url)), default_top_k_(default_top_k), timeout_seconds_(timeout_seconds) {
  if (base_url_.rfind("http://", 0) != 0) throw std::invalid_argument("tool server URL must start with http://");
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

ToolResult RemoteTools::post(const std::string& path, const nlohmann::json& body) const {
  httplib::Client client(base_url_);
  client.set_connection_timeout(10);
  client.set_read_timeout(timeout_seconds_);
  auto res = client.Post(path, body.dump(), "application/json");
  if (!res) return {false, "error: tool server unreachable: " + httplib::to_string(res.error()), 0, false};
  auto j = nlohmann::json::parse(res->body, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    return {false, fmt::format("error: tool server returned HTTP {} with a non-JSON body", res->status), 0, false};
  if (res->status != 200)
    return {false, "error: " + j.value("error", std::string("tool server rejected the request")), 0, false};
  return {j.value("ok", false), j.value("payload", std::string()), j.value("rows_returned", std::size_t{0}),
          j.value("truncated", false)};
}

ToolResult RemoteTools::dispatch(const protocol::ToolCallRequest& call) const {
  auto decoded = decode_tool_call(call, default_top_k_);
  if (auto* s = std::get_if<SearchArgs>(&decoded))
    return post("/tools/search", {{"keywords", s->keywords}, {"top_k", s->top_k}});
  if (auto* q = std::get_if<SqlArgs>(&decoded)) return post("/tools/code_interpreter", {{"sql_query", q->sql_query}});
  return std::get<ToolResult>(decoded);
}

std::string file_digest(const std::filesystem::path& path) { return hex64(fnv1a64(read_file(path.string()))); }

std::string make_run_id(const std::string& command, const ojson& config, const std::vector<InputDigest>& inputs) {
  std::string key = command + "\n" + config.dump();
  for (const auto& in : inputs) key += "\n" + in.path + "=" + in.digest;
  return "run-" + hex64(fnv1a64(key));
}

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

ojson digests_to_json(const std::vector<InputDigest>& v) {
  ojson arr = ojson::array();
  for (const auto& d : v) arr.push_back(ojson{{"path", d.path}, {"digest", d.digest}});
  return arr;
}

std::vector<InputDigest> digests_from_json(const ojson& j) {
  std::vector<InputDigest> out;
  for (const auto& d : j) out.push_back({d.at("path").get<std::string>(), d.at("digest").get<std::string>()});
  return out;
}

}  // namespace

ojson manifest_to_json(const RunManifest& m) {
  ojson j;
  j["run_id"] = m.run_id;
  j["command"] = m.command;
  j["config"] = m.config;
  j["inputs"] = digests_to_json(m.inputs);
  j["outputs"] = digests_to_json(m.outputs);
  j["started_at"] = m.started_at;
  j["wall_seconds"] = m.wall_seconds;
  return j;
}

RunManifest manifest_from_json(const ojson& j) {
  RunManifest m;
  m.run_id = j.at("run_id").get<std::string>();
  m.command = j.at("command").get<std::string>();
  m.config = j.at("config");
  m.inputs = digests_from_json(j.at("inputs"));
  m.outputs = digests_from_json(j.at("outputs"));
  m.started_at = j.value("started_at", std::string());
  m.wall_seconds = j.value("wall_seconds", 0.0);
  return m;
}

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  write_file(path.string(), manifest_to_json(m).dump(2) + "\n");
}

RunManifest read_manifest(const std::filesystem::path& path) {
  auto j = ojson::parse(read_file(path.string()), nullptr, false);
  if (j.is_discarded()) throw std::invalid_argument("manifest " + path.string() + " is not valid JSON");
  return manifest_from_json(j);
}

}  // namespace tableqa
