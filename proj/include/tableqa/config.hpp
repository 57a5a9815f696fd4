#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace tableqa {

/// One `key = value` line. Blank lines and lines starting with '#' are
/// skipped; surrounding whitespace is trimmed from both sides.
struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Throws std::invalid_argument ("line N: ...") on a line without '=' or
/// with an empty key, and on a key given twice.
std::vector<KeyValue> parse_key_values(std::string_view text);

std::int64_t kv_int(const KeyValue& kv);
std::uint64_t kv_uint(const KeyValue& kv);
double kv_double(const KeyValue& kv);
/// true/false, yes/no, on/off, 1/0.
bool kv_bool(const KeyValue& kv);

[[noreturn]] void kv_unknown(const KeyValue& kv);

}  // namespace tableqa
