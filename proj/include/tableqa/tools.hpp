#pragma once

#include <optional>
#include <string>
#include <variant>

#include "tableqa/protocol.hpp"
#include "tableqa/retrieval.hpp"
#include "tableqa/sql_sandbox.hpp"

namespace tableqa {

class CorpusHandle;

struct SearchArgs {
  std::string keywords;
  int top_k = kDefaultTopK;
};

struct SqlArgs {
  std::string sql_query;
};

/// Validates a parsed tool call. `search` takes `keywords` (string) and an
/// optional integral `top_k`; `code_interpreter` takes `sql_query`, falling
/// back to the `code` placeholder filled from a <code> block. Failures come
/// back as a ToolResult the model can read.
std::variant<SearchArgs, SqlArgs, ToolResult> decode_tool_call(const protocol::ToolCallRequest& call,
                                                                int default_top_k);

/// Where the agent's tool calls go. Implementations must be callable from
/// several episodes at once.
class ToolDispatcher {
 public:
  virtual ~ToolDispatcher() = default;
  virtual ToolResult dispatch(const protocol::ToolCallRequest& call) const = 0;
};

/// In-process tools over a shared, read-only corpus and index.
class LocalTools : public ToolDispatcher {
 public:
  LocalTools(const CorpusHandle& corpus, const Bm25Index& index, SandboxLimits limits = {},
             int default_top_k = kDefaultTopK);

  ToolResult search(const SearchArgs& args) const;
  ToolResult sql(const SqlArgs& args) const;
  ToolResult dispatch(const protocol::ToolCallRequest& call) const override;

  const CorpusHandle& corpus() const { return corpus_; }
  const Bm25Index& index() const { return index_; }
  const SandboxLimits& limits() const { return limits_; }

 private:
  const CorpusHandle& corpus_;
  const Bm25Index& index_;
  SandboxLimits limits_;
  int default_top_k_;
};

}  // namespace tableqa
