#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace tableqa {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TableRecord {
  std::string table_id;
  std::string page_title;
  std::string section_title;
  std::string caption;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  bool operator==(const TableRecord&) const = default;
};

enum class Split { train, valid, test };

std::string_view to_string(Split split);
/// Accepts "train", "valid" and "test".
std::optional<Split> parse_split(std::string_view name);

struct QaExample {
  std::string question_id;
  std::string question;
  std::vector<std::string> gold_answer;
  Split split = Split::test;
  std::optional<std::string> gold_table_id;
};

struct CorpusStats {
  std::size_t num_tables = 0;
  std::size_t train_questions = 0;
  std::size_t valid_questions = 0;
  std::size_t test_questions = 0;

  std::size_t total_questions() const { return train_questions + valid_questions + test_questions; }
};

/// A name that is safe to splice unquoted into SQL: `[A-Za-z_][A-Za-z0-9_]*`.
struct SqlIdentifier {
  std::string value;

  bool operator==(const SqlIdentifier&) const = default;
};

/// Base sanitation, without collision handling.
///
/// Lowercases, folds every maximal run of characters outside [a-z0-9] into a
/// single '_', and strips leading/trailing '_'. The result gets `prefix + "_"`
/// prepended when it starts with a digit, is an SQLite keyword, or names a
/// rowid alias; an empty result becomes `prefix` alone.
/// "2008 Summer Olympics–Table 3" -> "t_2008_summer_olympics_table_3".
SqlIdentifier sanitize_identifier(std::string_view raw, std::string_view prefix = "t");

/// Hands out sanitized names that are unique within one namespace (one corpus,
/// or the columns of one table). A base that is already taken gets the first
/// free suffix `_2`, `_3`, ... in allocation order.
class IdentifierAllocator {
 public:
  explicit IdentifierAllocator(std::string prefix = "t") : prefix_(std::move(prefix)) {}

  SqlIdentifier allocate(std::string_view raw);

 private:
  std::string prefix_;
  std::unordered_set<std::string> used_;
};

/// page_title, section_title, caption, header cells, then body cells in row
/// order, joined by single spaces. Empty fields and cells contribute nothing.
std::string flatten_document(const TableRecord& table);

/// Validates one corpus line. `line_no` is 1-based and only used in messages.
TableRecord parse_table_record(std::string_view line, std::size_t line_no);
std::vector<TableRecord> load_table_records(const std::filesystem::path& path);
std::vector<QaExample> load_qa_examples(const std::filesystem::path& path);

std::string table_record_to_json(const TableRecord& table);

struct ManifestEntry {
  std::string table_id;
  SqlIdentifier physical_name;
  std::vector<SqlIdentifier> columns;
};

/// An ingested corpus: the records, the table_id -> physical-name manifest, and
/// the SQLite file every table was materialized into. Read-only after
/// construction and safe to share between threads.
class CorpusHandle {
 public:
  /// Parses `corpus_path` and materializes it into `db_path`, replacing any
  /// existing file there. With an empty `db_path` the database lives in a
  /// temporary file owned by the handle.
  static CorpusHandle ingest(const std::filesystem::path& corpus_path, std::filesystem::path db_path = {});
  static CorpusHandle ingest_records(std::vector<TableRecord> records, std::filesystem::path db_path = {});
  /// Reopens a database written by ingest().
  static CorpusHandle open(const std::filesystem::path& db_path);

  CorpusHandle(CorpusHandle&&) noexcept;
  CorpusHandle& operator=(CorpusHandle&&) noexcept;
  CorpusHandle(const CorpusHandle&) = delete;
  CorpusHandle& operator=(const CorpusHandle&) = delete;
  ~CorpusHandle();

  std::size_t num_tables() const { return records_.size(); }
  const std::vector<TableRecord>& records() const { return records_; }
  const std::vector<ManifestEntry>& manifest() const { return manifest_; }
  const std::filesystem::path& db_path() const { return db_path_; }

  const ManifestEntry* find(std::string_view table_id) const;
  const TableRecord* record(std::string_view table_id) const;

  /// Reads every table back out of the database.
  std::vector<TableRecord> export_records() const;

  /// Digest over the database content of every physical table plus the
  /// manifest; changes iff any stored cell or name changes.
  std::string content_digest() const;

 private:
  CorpusHandle() = default;

  std::vector<TableRecord> records_;
  std::vector<ManifestEntry> manifest_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::filesystem::path db_path_;
  bool owns_db_ = false;
};

CorpusStats corpus_stats(const CorpusHandle& corpus, const std::vector<QaExample>& questions);

/// Name of the bookkeeping table written next to the physical tables.
inline constexpr std::string_view kManifestTable = "__corpus_manifest";

}  // namespace tableqa
