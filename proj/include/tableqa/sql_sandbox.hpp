#pragma once

#include <chrono>
#include <cstddef>
#include <string>
#include <string_view>

namespace tableqa {

class CorpusHandle;

struct SqlRequest {
  std::string sql_query;
};

struct SandboxLimits {
  std::size_t row_cap = 50;
  std::size_t char_cap = 4000;
  std::chrono::milliseconds timeout{5000};
};

/// Outcome of one tool invocation, as shown to the model.
struct ToolResult {
  bool ok = false;
  std::string payload;
  std::size_t rows_returned = 0;
  bool truncated = false;

  bool operator==(const ToolResult&) const = default;
};

inline constexpr std::string_view kTruncationMarker = "\n... (truncated)";
inline constexpr std::string_view kOnlySelectError = "error: only a single SELECT statement is allowed";
inline constexpr std::string_view kTimeoutError = "error: query timed out";

/// Cheap lexical gate run before the engine sees the statement: the first
/// keyword (after comments) must be SELECT or WITH, and no ';' may appear
/// outside literals/comments except as trailing terminator.
bool passes_statement_gate(std::string_view sql);

/// Runs one read-only statement against the corpus database in a fresh
/// read-only session. Successful output is a tab-separated header line of
/// column names followed by one tab-separated line per row (NULL renders as
/// "NULL"); output stops at `row_cap` rows or `char_cap` characters with
/// kTruncationMarker appended.
ToolResult execute_sql(const CorpusHandle& corpus, const SqlRequest& request, const SandboxLimits& limits = {});

}  // namespace tableqa
