#include "tableqa/corpus.hpp"

#include <fstream>
#include <random>

#include <fmt/format.h>
#include <json.hpp>

#include "sqlite_util.hpp"
#include "tableqa/text.hpp"

namespace tableqa {

using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "test";
}

std::optional<Split> parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "valid") return Split::valid;
  if (name == "test") return Split::test;
  return std::nullopt;
}

SqlIdentifier sanitize_identifier(std::string_view raw, std::string_view prefix) {
  std::string out;
  bool pending_sep = false;
  for (char ch : raw) {
    char c = ch;
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    bool alnum = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
    if (!alnum) {
      pending_sep = true;
      continue;
    }
    if (pending_sep && !out.empty()) out.push_back('_');
    pending_sep = false;
    out.push_back(c);
  }
  if (out.empty()) return {std::string(prefix)};
  bool needs_prefix = (out[0] >= '0' && out[0] <= '9') ||
                      sqlite3_keyword_check(out.data(), static_cast<int>(out.size())) != 0 ||
                      out == "rowid" || out == "oid";
  if (needs_prefix) out = std::string(prefix) + "_" + out;
  return {std::move(out)};
}

SqlIdentifier IdentifierAllocator::allocate(std::string_view raw) {
  auto base = sanitize_identifier(raw, prefix_).value;
  auto candidate = base;
  for (int suffix = 2; used_.count(candidate) != 0; ++suffix) candidate = base + "_" + std::to_string(suffix);
  used_.insert(candidate);
  return {std::move(candidate)};
}

std::string flatten_document(const TableRecord& table) {
  std::string out;
  auto append = [&out](const std::string& field) {
    if (field.empty()) return;
    if (!out.empty()) out.push_back(' ');
    out += field;
  };
  append(table.page_title);
  append(table.section_title);
  append(table.caption);
  for (const auto& h : table.header) append(h);
  for (const auto& row : table.rows)
    for (const auto& cell : row) append(cell);
  return out;
}

namespace {

[[noreturn]] void field_error(std::size_t line_no, std::string_view field, std::string_view what) {
  throw CorpusError(fmt::format("line {}: field '{}': {}", line_no, field, what));
}

std::string required_string(const json& obj, const char* field, std::size_t line_no) {
  auto it = obj.find(field);
  if (it == obj.end()) field_error(line_no, field, "missing");
  if (!it->is_string()) field_error(line_no, field, "expected string");
  return it->get<std::string>();
}

std::vector<std::string> string_array(const json& value, std::size_t line_no, std::string_view field) {
  if (!value.is_array()) field_error(line_no, field, "expected array of strings");
  std::vector<std::string> out;
  out.reserve(value.size());
  for (const auto& v : value) {
    if (!v.is_string()) field_error(line_no, field, "expected array of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

json parse_line_object(std::string_view line, std::size_t line_no) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw CorpusError(fmt::format("line {}: invalid JSON: {}", line_no, e.what()));
  }
  if (!obj.is_object()) throw CorpusError(fmt::format("line {}: expected a JSON object", line_no));
  return obj;
}

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    f(line, line_no);
  }
}

std::filesystem::path temp_db_path() {
  std::random_device rd;
  std::uint64_t nonce = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  return std::filesystem::temp_directory_path() / ("tableqa-" + hex64(nonce) + ".db");
}

void remove_db_files(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::remove(p, ec);
  std::filesystem::remove(p.string() + "-journal", ec);
}

json string_vector_json(const std::vector<SqlIdentifier>& ids) {
  json arr = json::array();
  for (const auto& id : ids) arr.push_back(id.value);
  return arr;
}

}  // namespace

TableRecord parse_table_record(std::string_view line, std::size_t line_no) {
  auto obj = parse_line_object(line, line_no);
  TableRecord t;
  t.table_id = required_string(obj, "table_id", line_no);
  if (t.table_id.empty()) field_error(line_no, "table_id", "must be non-empty");
  t.page_title = required_string(obj, "page_title", line_no);
  t.section_title = required_string(obj, "section_title", line_no);
  if (auto it = obj.find("caption"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) field_error(line_no, "caption", "expected string");
    t.caption = it->get<std::string>();
  }
  auto header = obj.find("header");
  if (header == obj.end()) field_error(line_no, "header", "missing");
  t.header = string_array(*header, line_no, "header");
  if (t.header.empty()) field_error(line_no, "header", "must be non-empty");
  auto rows = obj.find("rows");
  if (rows == obj.end()) field_error(line_no, "rows", "missing");
  if (!rows->is_array()) field_error(line_no, "rows", "expected array of arrays of strings");
  t.rows.reserve(rows->size());
  for (std::size_t i = 0; i < rows->size(); ++i) {
    auto row = string_array((*rows)[i], line_no, "rows");
    if (row.size() != t.header.size())
      throw CorpusError(fmt::format("table '{}' row {}: expected {} cells, found {}", t.table_id, i,
                                    t.header.size(), row.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::vector<TableRecord> load_table_records(const std::filesystem::path& path) {
  std::vector<TableRecord> records;
  std::unordered_map<std::string, std::size_t> first_line;
  for_each_line(path, [&](const std::string& line, std::size_t line_no) {
    auto rec = parse_table_record(line, line_no);
    auto [it, inserted] = first_line.emplace(rec.table_id, line_no);
    if (!inserted)
      throw CorpusError(
          fmt::format("duplicate table_id '{}' at lines {} and {}", rec.table_id, it->second, line_no));
    records.push_back(std::move(rec));
  });
  return records;
}

std::vector<QaExample> load_qa_examples(const std::filesystem::path& path) {
  std::vector<QaExample> out;
  for_each_line(path, [&](const std::string& line, std::size_t line_no) {
    auto obj = parse_line_object(line, line_no);
    QaExample q;
    q.question_id = required_string(obj, "question_id", line_no);
    q.question = required_string(obj, "question", line_no);
    auto answers = obj.find("answers");
    if (answers == obj.end()) field_error(line_no, "answers", "missing");
    q.gold_answer = string_array(*answers, line_no, "answers");
    if (q.gold_answer.empty()) field_error(line_no, "answers", "must be non-empty");
    auto split = parse_split(required_string(obj, "split", line_no));
    if (!split) field_error(line_no, "split", "expected one of train, valid, test");
    q.split = *split;
    if (auto it = obj.find("gold_table_id"); it != obj.end() && !it->is_null()) {
      if (!it->is_string()) field_error(line_no, "gold_table_id", "expected string or null");
      q.gold_table_id = it->get<std::string>();
    }
    out.push_back(std::move(q));
  });
  return out;
}

std::string table_record_to_json(const TableRecord& t) {
  nlohmann::ordered_json j;
  j["table_id"] = t.table_id;
  j["page_title"] = t.page_title;
  j["section_title"] = t.section_title;
  j["caption"] = t.caption;
  j["header"] = t.header;
  j["rows"] = t.rows;
  return j.dump();
}

CorpusHandle::CorpusHandle(CorpusHandle&& other) noexcept
    : records_(std::move(other.records_)),
      manifest_(std::move(other.manifest_)),
      by_id_(std::move(other.by_id_)),
      db_path_(std::move(other.db_path_)),
      owns_db_(other.owns_db_) {
  other.owns_db_ = false;
}

CorpusHandle& CorpusHandle::operator=(CorpusHandle&& other) noexcept {
  if (this != &other) {
    if (owns_db_) remove_db_files(db_path_);
    records_ = std::move(other.records_);
    manifest_ = std::move(other.manifest_);
    by_id_ = std::move(other.by_id_);
    db_path_ = std::move(other.db_path_);
    owns_db_ = other.owns_db_;
    other.owns_db_ = false;
  }
  return *this;
}

CorpusHandle::~CorpusHandle() {
  if (owns_db_) remove_db_files(db_path_);
}

CorpusHandle CorpusHandle::ingest(const std::filesystem::path& corpus_path, std::filesystem::path db_path) {
  return ingest_records(load_table_records(corpus_path), std::move(db_path));
}

CorpusHandle CorpusHandle::ingest_records(std::vector<TableRecord> records, std::filesystem::path db_path) {
  CorpusHandle h;
  h.owns_db_ = db_path.empty();
  h.db_path_ = h.owns_db_ ? temp_db_path() : std::move(db_path);
  remove_db_files(h.db_path_);

  IdentifierAllocator tables("t");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.header.empty()) throw CorpusError(fmt::format("table '{}': header must be non-empty", rec.table_id));
    if (!h.by_id_.emplace(rec.table_id, i).second)
      throw CorpusError(fmt::format("duplicate table_id '{}'", rec.table_id));
    ManifestEntry entry{rec.table_id, tables.allocate(rec.table_id), {}};
    IdentifierAllocator cols("c");
    for (std::size_t c = 0; c < rec.header.size(); ++c) {
      const auto& raw = rec.header[c];
      entry.columns.push_back(cols.allocate(trim(raw).empty() ? fmt::format("column {}", c + 1) : raw));
    }
    for (std::size_t r = 0; r < rec.rows.size(); ++r)
      if (rec.rows[r].size() != rec.header.size())
        throw CorpusError(fmt::format("table '{}' row {}: expected {} cells, found {}", rec.table_id, r,
                                      rec.header.size(), rec.rows[r].size()));
    h.manifest_.push_back(std::move(entry));
  }

  detail::Db db(h.db_path_.string(), SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE);
  db.exec("PRAGMA journal_mode=OFF; PRAGMA synchronous=OFF; BEGIN;");
  db.exec(fmt::format(
      "CREATE TABLE {} (ordinal INTEGER PRIMARY KEY, table_id TEXT NOT NULL UNIQUE, physical TEXT NOT NULL UNIQUE, "
      "page_title TEXT, section_title TEXT, caption TEXT, header TEXT, columns TEXT)",
      kManifestTable));
  detail::Stmt manifest_insert(db, fmt::format("INSERT INTO {} VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)", kManifestTable));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    const auto& entry = h.manifest_[i];
    std::string ddl = "CREATE TABLE " + entry.physical_name.value + " (";
    std::string insert = "INSERT INTO " + entry.physical_name.value + " VALUES (";
    for (std::size_t c = 0; c < entry.columns.size(); ++c) {
      if (c) {
        ddl += ", ";
        insert += ", ";
      }
      ddl += entry.columns[c].value + " TEXT";
      insert += "?" + std::to_string(c + 1);
    }
    db.exec(ddl + ")");
    detail::Stmt row_insert(db, insert + ")");
    for (const auto& row : rec.rows) {
      for (std::size_t c = 0; c < row.size(); ++c) row_insert.bind(static_cast<int>(c + 1), row[c]);
      row_insert.step();
      row_insert.reset();
    }
    manifest_insert.bind(1, static_cast<long long>(i));
    manifest_insert.bind(2, rec.table_id);
    manifest_insert.bind(3, entry.physical_name.value);
    manifest_insert.bind(4, rec.page_title);
    manifest_insert.bind(5, rec.section_title);
    manifest_insert.bind(6, rec.caption);
    manifest_insert.bind(7, json(rec.header).dump());
    manifest_insert.bind(8, string_vector_json(entry.columns).dump());
    manifest_insert.step();
    manifest_insert.reset();
  }
  db.exec("COMMIT");
  h.records_ = std::move(records);
  return h;
}

CorpusHandle CorpusHandle::open(const std::filesystem::path& db_path) {
  if (!std::filesystem::exists(db_path)) throw CorpusError("corpus database not found: " + db_path.string());
  CorpusHandle h;
  h.db_path_ = db_path;
  detail::Db db(db_path.string(), SQLITE_OPEN_READONLY);
  try {
    detail::Stmt q(db, fmt::format("SELECT table_id, physical, columns FROM {} ORDER BY ordinal", kManifestTable));
    while (q.step()) {
      ManifestEntry entry{q.column_text(0), {q.column_text(1)}, {}};
      for (const auto& c : json::parse(q.column_text(2))) entry.columns.push_back({c.get<std::string>()});
      h.by_id_.emplace(entry.table_id, h.manifest_.size());
      h.manifest_.push_back(std::move(entry));
    }
  } catch (const detail::SqliteError& e) {
    throw CorpusError("not a corpus database: " + db_path.string() + " (" + e.what() + ")");
  }
  h.records_ = h.export_records();
  return h;
}

const ManifestEntry* CorpusHandle::find(std::string_view table_id) const {
  auto it = by_id_.find(std::string(table_id));
  return it == by_id_.end() ? nullptr : &manifest_[it->second];
}

const TableRecord* CorpusHandle::record(std::string_view table_id) const {
  auto it = by_id_.find(std::string(table_id));
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

std::vector<TableRecord> CorpusHandle::export_records() const {
  detail::Db db(db_path_.string(), SQLITE_OPEN_READONLY);
  std::vector<TableRecord> out;
  detail::Stmt meta(db, fmt::format("SELECT table_id, page_title, section_title, caption, header, physical, columns "
                                    "FROM {} ORDER BY ordinal",
                                    kManifestTable));
  while (meta.step()) {
    TableRecord t;
    t.table_id = meta.column_text(0);
    t.page_title = meta.column_text(1);
    t.section_title = meta.column_text(2);
    t.caption = meta.column_text(3);
    t.header = json::parse(meta.column_text(4)).get<std::vector<std::string>>();
    auto physical = meta.column_text(5);
    auto ncols = static_cast<int>(t.header.size());
    detail::Stmt rows(db, "SELECT * FROM " + physical + " ORDER BY _rowid_");
    while (rows.step()) {
      std::vector<std::string> row;
      row.reserve(t.header.size());
      for (int c = 0; c < ncols; ++c) row.push_back(rows.column_text(c));
      t.rows.push_back(std::move(row));
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::string CorpusHandle::content_digest() const {
  detail::Db db(db_path_.string(), SQLITE_OPEN_READONLY);
  std::uint64_t h = fnv1a64("");
  auto feed = [&h](std::string_view s) {
    h = fnv1a64(std::to_string(s.size()) + ":", h);
    h = fnv1a64(s, h);
  };
  {
    detail::Stmt schema(db, "SELECT type, name, IFNULL(sql, '') FROM sqlite_master ORDER BY type, name");
    while (schema.step())
      for (int c = 0; c < 3; ++c) feed(schema.column_text(c));
  }
  std::vector<std::string> tables{std::string(kManifestTable)};
  for (const auto& e : manifest_) tables.push_back(e.physical_name.value);
  for (const auto& name : tables) {
    feed(name);
    detail::Stmt rows(db, "SELECT * FROM " + detail::quote_identifier(name) + " ORDER BY _rowid_");
    int ncols = sqlite3_column_count(rows.get());
    while (rows.step()) {
      for (int c = 0; c < ncols; ++c) feed(rows.column_text(c));
      feed("\n");
    }
  }
  return hex64(h);
}

CorpusStats corpus_stats(const CorpusHandle& corpus, const std::vector<QaExample>& questions) {
  CorpusStats s;
  s.num_tables = corpus.num_tables();
  for (const auto& q : questions) {
    switch (q.split) {
      case Split::train: ++s.train_questions; break;
      case Split::valid: ++s.valid_questions; break;
      case Split::test: ++s.test_questions; break;
    }
  }
  return s;
}

}  // namespace tableqa
