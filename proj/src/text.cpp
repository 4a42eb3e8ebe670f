#include "robustmc/text.hpp"

#include <algorithm>

namespace robustmc {

bool intersects(const Span& edit, const Span& guard) {
  if (guard.empty()) return false;
  if (edit.empty()) return guard.begin < edit.begin && edit.begin < guard.end;
  return edit.begin < guard.end && guard.begin < edit.end;
}

bool intersects_any(const Span& edit, const std::vector<Span>& guards) {
  return std::any_of(guards.begin(), guards.end(),
                     [&](const Span& g) { return intersects(edit, g); });
}

std::vector<Span> merge_spans(std::vector<Span> spans) {
  std::erase_if(spans, [](const Span& s) { return s.empty(); });
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) {
    return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
  });
  std::vector<Span> out;
  for (const auto& s : spans) {
    if (!out.empty() && s.begin <= out.back().end) {
      out.back().end = std::max(out.back().end, s.end);
    } else {
      out.push_back(s);
    }
  }
  return out;
}

std::vector<Span> complement(const std::vector<Span>& spans, std::size_t length) {
  std::vector<Span> out;
  std::size_t cursor = 0;
  for (const auto& s : spans) {
    if (s.begin > cursor) out.push_back({cursor, s.begin});
    cursor = std::max(cursor, s.end);
  }
  if (cursor < length) out.push_back({cursor, length});
  return out;
}

bool is_ascii_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_ascii_digit(char c) { return c >= '0' && c <= '9'; }
bool is_ascii_alnum(char c) { return is_ascii_alpha(c) || is_ascii_digit(c); }
bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_char_boundary(std::string_view text, std::size_t pos) {
  if (pos == 0 || pos >= text.size()) return pos <= text.size();
  return (static_cast<unsigned char>(text[pos]) & 0xC0) != 0x80;
}

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::string_view trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_ascii_space(s[b])) ++b;
  while (e > b && is_ascii_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

std::vector<std::string_view> split_whitespace(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_ascii_space(s[i])) ++i;
    std::size_t start = i;
    while (i < s.size() && !is_ascii_space(s[i])) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

}  // namespace robustmc
