#include "tableqa/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "tableqa/corpus.hpp"
#include "tableqa/text.hpp"

namespace tableqa {

void Bm25Params::validate() const {
  if (!(k1 > 0.0)) throw std::invalid_argument("bm25: k1 must be positive");
  if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("bm25: b must lie in [0, 1]");
  if (!(delta >= 0.0)) throw std::invalid_argument("bm25: delta must be non-negative");
}

Bm25Index::Bm25Index(std::vector<std::pair<std::string, std::string>> docs, Bm25Params params) : params_(params) {
  params_.validate();
  std::sort(docs.begin(), docs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < docs.size(); ++i)
    if (docs[i].first == docs[i - 1].first)
      throw std::invalid_argument("bm25: duplicate table_id '" + docs[i].first + "'");

  std::uint64_t total_len = 0;
  doc_ids_.reserve(docs.size());
  doc_len_.reserve(docs.size());
  for (std::uint32_t ord = 0; ord < docs.size(); ++ord) {
    auto tokens = tokenize(docs[ord].second);
    std::map<std::string, std::uint32_t> tf;
    for (auto& t : tokens) ++tf[t];
    for (auto& [term, count] : tf) postings_[term].push_back({ord, count});
    doc_ids_.push_back(std::move(docs[ord].first));
    doc_len_.push_back(static_cast<std::uint32_t>(tokens.size()));
    total_len += tokens.size();
  }
  avgdl_ = doc_ids_.empty() ? 0.0 : static_cast<double>(total_len) / static_cast<double>(doc_ids_.size());
}

const std::vector<Posting>& Bm25Index::postings(std::string_view term) const {
  static const std::vector<Posting> empty;
  auto it = postings_.find(std::string(term));
  return it == postings_.end() ? empty : it->second;
}

std::uint32_t Bm25Index::term_frequency(std::string_view term, std::uint32_t doc) const {
  const auto& list = postings(term);
  auto it = std::lower_bound(list.begin(), list.end(), doc, [](const Posting& p, std::uint32_t d) { return p.doc < d; });
  return (it != list.end() && it->doc == doc) ? it->tf : 0;
}

double Bm25Index::idf(std::string_view term) const {
  auto n = static_cast<double>(doc_ids_.size());
  auto df = static_cast<double>(postings(term).size());
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

double Bm25Index::term_weight(double idf, std::uint32_t tf, std::uint32_t dl) const {
  const auto [k1, b, delta] = params_;
  double f = tf;
  double norm = k1 * (1.0 - b + b * static_cast<double>(dl) / avgdl_);
  return idf * ((f * (k1 + 1.0)) / (f + norm) + delta);
}

std::vector<std::string> Bm25Index::distinct_sorted(std::vector<std::string> terms) {
  std::sort(terms.begin(), terms.end());
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
  return terms;
}

double Bm25Index::score(const std::vector<std::string>& query_terms, std::uint32_t doc) const {
  if (doc >= doc_ids_.size()) throw std::out_of_range(fmt::format("bm25: invalid document ordinal {}", doc));
  double total = 0.0;
  for (const auto& term : distinct_sorted(query_terms)) {
    auto tf = term_frequency(term, doc);
    if (tf > 0) total += term_weight(idf(term), tf, doc_len_[doc]);
  }
  return total;
}

std::vector<ScoredHit> Bm25Index::search(std::string_view keywords, int top_k) const {
  if (top_k < 1) throw std::invalid_argument("search: top_k must be at least 1");
  auto terms = distinct_sorted(tokenize(keywords));
  // Term-at-a-time accumulation in the same term order as score(), so both
  // paths produce bit-identical sums.
  std::vector<double> acc(doc_ids_.size(), 0.0);
  std::vector<std::uint32_t> touched;
  for (const auto& term : terms) {
    const auto& list = postings(term);
    if (list.empty()) continue;
    double w = idf(term);
    for (const auto& p : list) {
      if (acc[p.doc] == 0.0) touched.push_back(p.doc);
      acc[p.doc] += term_weight(w, p.tf, doc_len_[p.doc]);
    }
  }
  std::vector<ScoredHit> hits;
  hits.reserve(touched.size());
  for (auto d : touched)
    if (acc[d] > 0.0) hits.push_back({doc_ids_[d], acc[d]});
  auto cmp = [](const ScoredHit& a, const ScoredHit& b) {
    return a.score != b.score ? a.score > b.score : a.table_id < b.table_id;
  };
  auto k = std::min<std::size_t>(static_cast<std::size_t>(top_k), hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), cmp);
  hits.resize(k);
  return hits;
}

Bm25Index build_corpus_index(const CorpusHandle& corpus, Bm25Params params) {
  std::vector<std::pair<std::string, std::string>> docs;
  docs.reserve(corpus.num_tables());
  for (const auto& rec : corpus.records()) docs.emplace_back(rec.table_id, flatten_document(rec));
  return Bm25Index(std::move(docs), params);
}

std::string render_search_results(const CorpusHandle& corpus, const std::vector<ScoredHit>& hits) {
  if (hits.empty()) return std::string(kNoSearchResults);
  std::string out;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const auto* entry = corpus.find(hits[i].table_id);
    const auto* rec = corpus.record(hits[i].table_id);
    if (!entry || !rec) throw std::out_of_range("search hit not in corpus: " + hits[i].table_id);
    std::string columns;
    for (std::size_t c = 0; c < entry->columns.size(); ++c) {
      if (c) columns += ", ";
      columns += entry->columns[c].value;
    }
    if (i) out.push_back('\n');
    out += fmt::format("{}. {} | {} / {} | columns: {}", i + 1, entry->physical_name.value, rec->page_title,
                       rec->section_title, columns);
  }
  return out;
}

}  // namespace tableqa
