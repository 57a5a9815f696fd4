#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace tableqa {

class CorpusHandle;

/// BM25+ free parameters. Defaults are the usual literature values.
struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
  double delta = 1.0;

  /// Throws std::invalid_argument unless k1 > 0, 0 <= b <= 1, delta >= 0.
  void validate() const;
};

struct Posting {
  std::uint32_t doc;
  std::uint32_t tf;
};

struct ScoredHit {
  std::string table_id;
  double score;

  bool operator==(const ScoredHit&) const = default;
};

inline constexpr int kDefaultTopK = 8;

/// Immutable inverted index. Documents are stored sorted by table_id so the
/// ordinal assignment, and therefore every score, does not depend on the
/// order documents were supplied in.
class Bm25Index {
 public:
  Bm25Index(std::vector<std::pair<std::string, std::string>> docs, Bm25Params params = {});

  std::size_t num_docs() const { return doc_ids_.size(); }
  double avgdl() const { return avgdl_; }
  const Bm25Params& params() const { return params_; }
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  const std::vector<std::uint32_t>& doc_lengths() const { return doc_len_; }
  std::size_t num_terms() const { return postings_.size(); }

  /// Postings for a term, sorted by doc ordinal; empty if unseen.
  const std::vector<Posting>& postings(std::string_view term) const;
  std::uint32_t term_frequency(std::string_view term, std::uint32_t doc) const;

  double idf(std::string_view term) const;

  /// BM25+ score of one document. Duplicate query terms count once.
  /// Throws std::out_of_range for an invalid ordinal.
  double score(const std::vector<std::string>& query_terms, std::uint32_t doc) const;

  /// Top-k positive-scoring documents, score descending then table_id
  /// ascending. Throws std::invalid_argument when top_k < 1.
  std::vector<ScoredHit> search(std::string_view keywords, int top_k = kDefaultTopK) const;

 private:
  double term_weight(double idf, std::uint32_t tf, std::uint32_t dl) const;
  static std::vector<std::string> distinct_sorted(std::vector<std::string> terms);

  Bm25Params params_;
  std::vector<std::string> doc_ids_;
  std::vector<std::uint32_t> doc_len_;
  double avgdl_ = 0.0;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

/// Indexes flatten_document() of every corpus table, keyed by table_id.
Bm25Index build_corpus_index(const CorpusHandle& corpus, Bm25Params params = {});

/// One line per hit:
/// `rank. <physical name> | <page_title> / <section_title> | columns: <c1>, <c2>`
/// using the sanitized names the SQL tool accepts.
std::string render_search_results(const CorpusHandle& corpus, const std::vector<ScoredHit>& hits);

inline constexpr std::string_view kNoSearchResults = "no tables matched the keywords";

}  // namespace tableqa
