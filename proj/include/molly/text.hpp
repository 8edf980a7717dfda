#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace molly::text {

/// Decodes UTF-8 into code points. Invalid sequences decode to U+FFFD, one
/// replacement per offending byte, so every input byte is accounted for.
std::u32string decode_utf8(std::string_view s);
std::string encode_utf8(std::u32string_view s);
void append_utf8(std::string& out, char32_t cp);

/// Number of code points in a UTF-8 string.
std::size_t length(std::string_view s);

std::string_view trim(std::string_view s);
bool is_blank(std::string_view s);

std::vector<std::string_view> split_lines(std::string_view s);

bool is_cjk(char32_t cp);

// Token counting. The default rule counts each CJK character as one token and
// each maximal run of other word characters as one token; punctuation and
// whitespace count for nothing.
using TokenCounter = std::function<std::size_t(std::string_view)>;
std::size_t count_tokens_cjk(std::string_view s);
std::size_t count_tokens_whitespace(std::string_view s);
/// "cjk" (default) or "whitespace"; throws InvalidConfig for anything else.
TokenCounter token_counter(std::string_view name);

struct FencedBlock {
  std::string info;   // language tag after the opening fence, trimmed
  std::string body;   // lines between the fences joined with '\n'
  std::size_t open_line = 0;  // 1-based
};

/// All triple-backtick fenced blocks in document order. Throws
/// UnterminatedFence when an opening fence has no closing fence.
std::vector<FencedBlock> scan_fences(std::string_view s);

/// True iff `s` contains at least one complete fenced block. Never throws.
bool has_fenced_block(std::string_view s);

/// Extracts `KEY: value` fields from model output. A key is recognized at the
/// start of a line or after a '/' separator, case-insensitively, followed by
/// an ASCII or full-width colon. A value runs until the next recognized key.
/// Keys in the result are spelled as given in `keys`; the first occurrence wins.
std::map<std::string, std::string> parse_keyed_fields(std::string_view s,
                                                      const std::vector<std::string>& keys);

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Rounds half away from zero at `digits` decimals, tolerant of binary
/// representation error: 82.135 stored as 82.13499999999 still rounds to 82.14.
double round_half_up(double v, int digits = 2);
std::string format_fixed(double v, int digits = 2);

}  // namespace molly::text
