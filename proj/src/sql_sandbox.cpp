#include "tableqa/sql_sandbox.hpp"

#include <sqlite3.h>

#include "sqlite_util.hpp"
#include "tableqa/corpus.hpp"
#include "tableqa/text.hpp"

namespace tableqa {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// Skips whitespace and SQL comments starting at i. An unterminated block
// comment runs to the end of input.
std::size_t skip_trivia(std::string_view sql, std::size_t i) {
  while (i < sql.size()) {
    if (is_space(sql[i])) {
      ++i;
    } else if (sql.compare(i, 2, "--") == 0) {
      auto nl = sql.find('\n', i);
      i = nl == std::string_view::npos ? sql.size() : nl + 1;
    } else if (sql.compare(i, 2, "/*") == 0) {
      auto end = sql.find("*/", i + 2);
      i = end == std::string_view::npos ? sql.size() : end + 2;
    } else {
      break;
    }
  }
  return i;
}

bool only_trivia(std::string_view sql) { return skip_trivia(sql, 0) == sql.size(); }

// Position of the first ';' outside quotes, brackets and comments, or npos.
std::size_t find_separator(std::string_view sql) {
  for (std::size_t i = 0; i < sql.size();) {
    char c = sql[i];
    if (c == '\'' || c == '"' || c == '`') {
      // Doubled quotes escape themselves, which this loop handles by
      // re-entering the quoted state immediately.
      auto end = sql.find(c, i + 1);
      if (end == std::string_view::npos) return std::string_view::npos;
      i = end + 1;
    } else if (c == '[') {
      auto end = sql.find(']', i + 1);
      if (end == std::string_view::npos) return std::string_view::npos;
      i = end + 1;
    } else if (sql.compare(i, 2, "--") == 0 || sql.compare(i, 2, "/*") == 0) {
      i = skip_trivia(sql, i);
    } else if (c == ';') {
      return i;
    } else {
      ++i;
    }
  }
  return std::string_view::npos;
}

struct Deadline {
  std::chrono::steady_clock::time_point at;
  bool fired = false;
};

int progress_callback(void* user) {
  auto* d = static_cast<Deadline*>(user);
  if (std::chrono::steady_clock::now() >= d->at) {
    d->fired = true;
    return 1;
  }
  return 0;
}

int authorizer(void* denied, int action, const char*, const char*, const char*, const char*) {
  switch (action) {
    case SQLITE_SELECT:
    case SQLITE_READ:
    case SQLITE_FUNCTION:
    case SQLITE_RECURSIVE:
      return SQLITE_OK;
    default:
      *static_cast<bool*>(denied) = true;
      return SQLITE_DENY;
  }
}

std::string render_cell(sqlite3_stmt* stmt, int col) {
  if (sqlite3_column_type(stmt, col) == SQLITE_NULL) return "NULL";
  auto p = reinterpret_cast<const char*>(sqlite3_column_text(stmt, col));
  std::string cell(p ? p : "", static_cast<std::size_t>(sqlite3_column_bytes(stmt, col)));
  for (auto& c : cell)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return cell;
}

// Largest prefix of s no longer than n bytes that does not split a UTF-8
// sequence.
std::string_view utf8_prefix(std::string_view s, std::size_t n) {
  if (s.size() <= n) return s;
  while (n > 0 && (static_cast<unsigned char>(s[n]) & 0xC0) == 0x80) --n;
  return s.substr(0, n);
}

ToolResult failure(std::string payload) { return ToolResult{false, std::move(payload), 0, false}; }

}  // namespace

bool passes_statement_gate(std::string_view sql) {
  auto start = skip_trivia(sql, 0);
  std::size_t end = start;
  while (end < sql.size() && ((sql[end] >= 'a' && sql[end] <= 'z') || (sql[end] >= 'A' && sql[end] <= 'Z'))) ++end;
  auto keyword = to_lower_ascii(sql.substr(start, end - start));
  if (keyword != "select" && keyword != "with") return false;
  auto sep = find_separator(sql);
  return sep == std::string_view::npos || only_trivia(sql.substr(sep + 1));
}

ToolResult execute_sql(const CorpusHandle& corpus, const SqlRequest& request, const SandboxLimits& limits) {
  std::string_view sql = request.sql_query;
  if (trim(sql).empty()) return failure("error: empty SQL statement");
  if (!passes_statement_gate(sql)) return failure(std::string(kOnlySelectError));

  detail::Db db(corpus.db_path().string(), SQLITE_OPEN_READONLY | SQLITE_OPEN_NOMUTEX);
  sqlite3* raw = db.get();
  bool denied = false;
  sqlite3_set_authorizer(raw, authorizer, &denied);
  Deadline deadline{std::chrono::steady_clock::now() + limits.timeout};
  sqlite3_progress_handler(raw, 1000, progress_callback, &deadline);

  sqlite3_stmt* stmt = nullptr;
  const char* tail = nullptr;
  int rc = sqlite3_prepare_v2(raw, sql.data(), static_cast<int>(sql.size()), &stmt, &tail);
  struct Finalizer {
    sqlite3_stmt*& s;
    ~Finalizer() { sqlite3_finalize(s); }
  } finalizer{stmt};

  if (rc == SQLITE_AUTH || denied) return failure(std::string(kOnlySelectError));
  if (rc != SQLITE_OK) {
    if (deadline.fired) return failure(std::string(kTimeoutError));
    return failure(std::string("error: ") + sqlite3_errmsg(raw));
  }
  if (!stmt) return failure("error: empty SQL statement");
  std::string_view rest(tail, static_cast<std::size_t>(sql.data() + sql.size() - tail));
  if (!only_trivia(rest) || !sqlite3_stmt_readonly(stmt)) return failure(std::string(kOnlySelectError));

  ToolResult result{true, {}, 0, false};
  int ncols = sqlite3_column_count(stmt);
  std::string header;
  for (int c = 0; c < ncols; ++c) {
    if (c) header.push_back('\t');
    auto name = sqlite3_column_name(stmt, c);
    header += name ? name : "";
  }
  if (header.size() > limits.char_cap) {
    result.payload = std::string(utf8_prefix(header, limits.char_cap));
    result.truncated = true;
  } else {
    result.payload = std::move(header);
  }

  while (true) {
    rc = sqlite3_step(stmt);
    if (rc == SQLITE_DONE) break;
    if (rc != SQLITE_ROW) {
      if (deadline.fired || rc == SQLITE_INTERRUPT) return failure(std::string(kTimeoutError));
      return failure(std::string("error: ") + sqlite3_errmsg(raw));
    }
    if (result.truncated || result.rows_returned >= limits.row_cap) {
      result.truncated = true;
      break;
    }
    std::string line;
    for (int c = 0; c < ncols; ++c) {
      if (c) line.push_back('\t');
      line += render_cell(stmt, c);
    }
    if (result.payload.size() + 1 + line.size() > limits.char_cap) {
      result.truncated = true;
      break;
    }
    result.payload.push_back('\n');
    result.payload += line;
    ++result.rows_returned;
  }
  if (result.truncated) result.payload += kTruncationMarker;
  return result;
}

}  // namespace tableqa
