#include "tableqa/tools.hpp"

#include <cmath>
#include <limits>

#include "tableqa/corpus.hpp"

namespace tableqa {

namespace {

ToolResult tool_error(std::string message) { return ToolResult{false, "error: " + std::move(message), 0, false}; }

std::optional<int> integral_value(const nlohmann::json& v) {
  if (v.is_number_integer()) {
    auto n = v.get<long long>();
    if (n < std::numeric_limits<int>::min() || n > std::numeric_limits<int>::max()) return std::nullopt;
    return static_cast<int>(n);
  }
  if (v.is_number_float()) {
    double d = v.get<double>();
    if (std::floor(d) != d || std::abs(d) > 1e9) return std::nullopt;
    return static_cast<int>(d);
  }
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    if (s.empty() || s.size() > 9) return std::nullopt;
    for (char c : s)
      if (c < '0' || c > '9') return std::nullopt;
    return std::stoi(s);
  }
  return std::nullopt;
}

}  // namespace

std::variant<SearchArgs, SqlArgs, ToolResult> decode_tool_call(const protocol::ToolCallRequest& call,
                                                                int default_top_k) {
  const auto& args = call.arguments;
  if (call.name == "search") {
    SearchArgs out{"", default_top_k};
    auto kw = args.find("keywords");
    if (kw == args.end() || !kw->is_string()) return tool_error("search requires a string \"keywords\" argument");
    out.keywords = kw->get<std::string>();
    if (auto k = args.find("top_k"); k != args.end() && !k->is_null()) {
      auto n = integral_value(*k);
      if (!n) return tool_error("search \"top_k\" must be an integer");
      if (*n < 1) return tool_error("search \"top_k\" must be at least 1");
      out.top_k = *n;
    }
    return out;
  }
  if (call.name == "code_interpreter") {
    for (const char* key : {"sql_query", "code"}) {
      auto it = args.find(key);
      if (it != args.end() && it->is_string() && !it->get_ref<const std::string&>().empty())
        return SqlArgs{it->get<std::string>()};
    }
    return tool_error("code_interpreter requires SQL in \"sql_query\" or a <code> block");
  }
  return tool_error("unknown tool '" + call.name + "'; available tools: search, code_interpreter");
}

LocalTools::LocalTools(const CorpusHandle& corpus, const Bm25Index& index, SandboxLimits limits, int default_top_k)
    : corpus_(corpus), index_(index), limits_(limits), default_top_k_(default_top_k) {}

ToolResult LocalTools::search(const SearchArgs& args) const {
  if (args.top_k < 1) return tool_error("search \"top_k\" must be at least 1");
  auto hits = index_.search(args.keywords, args.top_k);
  return ToolResult{true, render_search_results(corpus_, hits), hits.size(), false};
}

ToolResult LocalTools::sql(const SqlArgs& args) const { return execute_sql(corpus_, {args.sql_query}, limits_); }

ToolResult LocalTools::dispatch(const protocol::ToolCallRequest& call) const {
  auto decoded = decode_tool_call(call, default_top_k_);
  if (auto* s = std::get_if<SearchArgs>(&decoded)) return search(*s);
  if (auto* q = std::get_if<SqlArgs>(&decoded)) return sql(*q);
  return std::get<ToolResult>(decoded);
}

}  // namespace tableqa
