#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace tableqa {

/// Lowercases ASCII, splits on maximal runs of non-alphanumeric characters
/// and drops empty tokens.
///
/// ASCII letters and digits are alphanumeric. Non-ASCII code points count
/// as word characters unless they fall in a punctuation or space block
/// (U+0080..U+00BF, U+2000..U+206F, U+3000..U+303F, U+FE30..U+FE4F,
/// U+FF00..U+FF0F), so "Olympics–Table" splits at the en dash while
/// accented words stay whole.
std::vector<std::string> tokenize(std::string_view text);

/// Word pieces (as produced by tokenize) plus maximal runs of punctuation
/// characters. Whitespace is never counted. Approximate by construction.
std::size_t count_word_pieces(std::string_view text);

std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

/// 64-bit FNV-1a; used for content digests and run ids, not for security.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Formats an integer with comma thousands separators ("11,997").
std::string with_thousands(long long v);

/// Reads a whole file; throws std::runtime_error when it cannot be opened.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace tableqa
