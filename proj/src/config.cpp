#include "tableqa/config.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>

#include "tableqa/text.hpp"

namespace tableqa {

std::vector<KeyValue> parse_key_values(std::string_view text) {
  std::vector<KeyValue> out;
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw std::invalid_argument(fmt::format("line {}: expected key = value", line_no));
    KeyValue kv{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no};
    if (kv.key.empty()) throw std::invalid_argument(fmt::format("line {}: empty key", line_no));
    auto [it, fresh] = seen.emplace(kv.key, line_no);
    if (!fresh)
      throw std::invalid_argument(fmt::format("line {}: key '{}' already set on line {}", line_no, kv.key, it->second));
    out.push_back(std::move(kv));
  }
  return out;
}

namespace {

[[noreturn]] void bad_value(const KeyValue& kv, std::string_view expected) {
  throw std::invalid_argument(fmt::format("line {}: '{}' expects {}, got '{}'", kv.line, kv.key, expected, kv.value));
}

template <typename T>
T parse_number(const KeyValue& kv, std::string_view expected) {
  T v{};
  const char* first = kv.value.data();
  const char* last = first + kv.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) bad_value(kv, expected);
  return v;
}

}  // namespace

std::int64_t kv_int(const KeyValue& kv) { return parse_number<std::int64_t>(kv, "an integer"); }

std::uint64_t kv_uint(const KeyValue& kv) { return parse_number<std::uint64_t>(kv, "a non-negative integer"); }

double kv_double(const KeyValue& kv) {
  double v = parse_number<double>(kv, "a number");
  if (!std::isfinite(v)) bad_value(kv, "a finite number");
  return v;
}

bool kv_bool(const KeyValue& kv) {
  auto v = to_lower_ascii(kv.value);
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  bad_value(kv, "a boolean");
}

void kv_unknown(const KeyValue& kv) {
  throw std::invalid_argument(fmt::format("line {}: unknown key '{}'", kv.line, kv.key));
}

}  // namespace tableqa
