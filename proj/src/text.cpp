#include "molly/text.hpp"

#include <cmath>
#include <cstdio>

#include "molly/error.hpp"

namespace molly::text {

std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  const auto n = s.size();
  while (i < n) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      out.push_back(b0);
      ++i;
      continue;
    } else if ((b0 & 0xE0) == 0xC0) {
      extra = 1;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      extra = 2;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      extra = 3;
      cp = b0 & 0x07;
    } else {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    if (i + extra >= n) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    bool ok = true;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += extra + 1;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string encode_utf8(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : s) append_utf8(out, cp);
  return out;
}

std::size_t length(std::string_view s) { return decode_utf8(s).size(); }

std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

bool is_blank(std::string_view s) { return trim(s).empty(); }

std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto nl = s.find('\n', pos);
    if (nl == std::string_view::npos) nl = s.size();
    auto line = s.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl + 1;
  }
  return lines;
}

bool is_cjk(char32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) ||    // unified ideographs
         (cp >= 0x3400 && cp <= 0x4DBF) ||    // extension A
         (cp >= 0x20000 && cp <= 0x2EBEF) ||  // extensions B-F
         (cp >= 0xF900 && cp <= 0xFAFF) ||    // compatibility ideographs
         (cp >= 0x3040 && cp <= 0x30FF) ||    // kana
         (cp >= 0xAC00 && cp <= 0xD7AF);      // hangul syllables
}

namespace {

bool is_word_char(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= '0' && cp <= '9') || (cp >= 'A' && cp <= 'Z') || (cp >= 'a' && cp <= 'z') ||
           cp == '_';
  }
  if (is_cjk(cp)) return false;
  // Punctuation and symbol blocks that commonly appear in Chinese prose.
  if (cp >= 0x2000 && cp <= 0x206F) return false;
  if (cp >= 0x3000 && cp <= 0x303F) return false;
  if (cp >= 0xFE30 && cp <= 0xFE4F) return false;
  if (cp >= 0xFF00 && cp <= 0xFF0F) return false;
  if (cp >= 0xFF1A && cp <= 0xFF20) return false;
  if (cp >= 0xFF3B && cp <= 0xFF40) return false;
  if (cp >= 0xFF5B && cp <= 0xFF65) return false;
  if (cp == 0x00A0 || cp == 0xFEFF || cp == 0xFFFD) return false;
  if (cp >= 0x00A1 && cp <= 0x00BF) return false;
  return true;
}

}  // namespace

std::size_t count_tokens_cjk(std::string_view s) {
  std::size_t tokens = 0;
  bool in_word = false;
  for (char32_t cp : decode_utf8(s)) {
    if (is_cjk(cp)) {
      ++tokens;
      in_word = false;
    } else if (is_word_char(cp)) {
      if (!in_word) ++tokens;
      in_word = true;
    } else {
      in_word = false;
    }
  }
  return tokens;
}

std::size_t count_tokens_whitespace(std::string_view s) {
  std::size_t tokens = 0;
  bool in_token = false;
  for (char c : s) {
    const bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    if (!ws && !in_token) ++tokens;
    in_token = !ws;
  }
  return tokens;
}

TokenCounter token_counter(std::string_view name) {
  if (name.empty() || name == "cjk") return count_tokens_cjk;
  if (name == "whitespace") return count_tokens_whitespace;
  throw Error(ErrorCode::InvalidConfig, "tokenizer", "unknown tokenizer '" + std::string(name) + "'");
}

namespace {

bool is_fence_line(std::string_view line) {
  const auto t = trim(line);
  return t.size() >= 3 && t.substr(0, 3) == "```";
}

bool is_closing_fence(std::string_view line) {
  const auto t = trim(line);
  return t.size() >= 3 && t.find_first_not_of('`') == std::string_view::npos;
}

template <typename OnBlock>
bool walk_fences(std::string_view s, OnBlock&& on_block, std::size_t* unterminated_line) {
  const auto lines = split_lines(s);
  std::size_t i = 0;
  while (i < lines.size()) {
    if (!is_fence_line(lines[i])) {
      ++i;
      continue;
    }
    FencedBlock block;
    block.open_line = i + 1;
    block.info = std::string(trim(trim(lines[i]).substr(3)));
    while (!block.info.empty() && block.info.front() == '`') block.info.erase(0, 1);
    std::size_t j = i + 1;
    std::string body;
    bool closed = false;
    for (; j < lines.size(); ++j) {
      if (is_closing_fence(lines[j])) {
        closed = true;
        break;
      }
      if (j > i + 1) body.push_back('\n');
      body.append(lines[j]);
    }
    if (!closed) {
      if (unterminated_line) *unterminated_line = block.open_line;
      return false;
    }
    block.body = std::move(body);
    on_block(std::move(block));
    i = j + 1;
  }
  return true;
}

}  // namespace

std::vector<FencedBlock> scan_fences(std::string_view s) {
  std::vector<FencedBlock> blocks;
  std::size_t bad_line = 0;
  if (!walk_fences(s, [&](FencedBlock b) { blocks.push_back(std::move(b)); }, &bad_line)) {
    throw Error(ErrorCode::UnterminatedFence, {}, "opening fence has no closing fence", bad_line);
  }
  return blocks;
}

bool has_fenced_block(std::string_view s) {
  bool found = false;
  walk_fences(s, [&](FencedBlock) { found = true; }, nullptr);
  return found;
}

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

double round_half_up(double v, int digits) {
  const double scale = std::pow(10.0, digits);
  const double scaled = v * scale;
  const double sign = scaled < 0 ? -1.0 : 1.0;
  return sign * std::floor(std::abs(scaled) + 0.5 + 1e-7) / scale;
}

std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, round_half_up(v, digits));
  return buf;
}

}  // namespace molly::text

namespace molly::text {

namespace {

bool iequals_prefix(std::string_view s, std::size_t pos, std::string_view key) {
  if (pos + key.size() > s.size()) return false;
  for (std::size_t i = 0; i < key.size(); ++i) {
    auto a = static_cast<unsigned char>(s[pos + i]);
    auto b = static_cast<unsigned char>(key[i]);
    if (a >= 'a' && a <= 'z') a = static_cast<unsigned char>(a - 32);
    if (b >= 'a' && b <= 'z') b = static_cast<unsigned char>(b - 32);
    if (a != b) return false;
  }
  return true;
}

// Position just past the colon, or npos.
std::size_t colon_after(std::string_view s, std::size_t pos) {
  while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  if (pos < s.size() && s[pos] == ':') return pos + 1;
  constexpr std::string_view fullwidth = "\xEF\xBC\x9A";
  if (s.substr(pos, fullwidth.size()) == fullwidth) return pos + fullwidth.size();
  return std::string_view::npos;
}

bool at_field_boundary(std::string_view s, std::size_t pos) {
  std::size_t i = pos;
  while (i > 0 && (s[i - 1] == ' ' || s[i - 1] == '\t')) --i;
  return i == 0 || s[i - 1] == '\n' || s[i - 1] == '/';
}

}  // namespace

std::map<std::string, std::string> parse_keyed_fields(std::string_view s,
                                                      const std::vector<std::string>& keys) {
  struct Match {
    std::size_t key_index;
    std::size_t start;
    std::size_t value_start;
  };
  std::vector<Match> matches;
  for (std::size_t pos = 0; pos < s.size(); ++pos) {
    if (!at_field_boundary(s, pos) || s[pos] == ' ' || s[pos] == '\t') continue;
    for (std::size_t k = 0; k < keys.size(); ++k) {
      if (!iequals_prefix(s, pos, keys[k])) continue;
      const auto v = colon_after(s, pos + keys[k].size());
      if (v == std::string_view::npos) continue;
      matches.push_back({k, pos, v});
      pos = v - 1;
      break;
    }
  }
  std::map<std::string, std::string> out;
  for (std::size_t m = 0; m < matches.size(); ++m) {
    const auto end = m + 1 < matches.size() ? matches[m + 1].start : s.size();
    auto value = trim(s.substr(matches[m].value_start, end - matches[m].value_start));
    while (!value.empty() && value.back() == '/') value = trim(value.substr(0, value.size() - 1));
    out.emplace(keys[matches[m].key_index], std::string(value));
  }
  return out;
}

}  // namespace molly::text
