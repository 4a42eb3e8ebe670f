#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace robustmc {

// Half-open byte interval [begin, end) into a UTF-8 string.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
  bool contains(std::size_t pos) const { return begin <= pos && pos < end; }

  friend bool operator==(const Span&, const Span&) = default;
};

// True when the edit span would disturb bytes of `guard`. Non-empty spans
// intersect on shared bytes; an empty (insertion) span intersects only when
// it falls strictly inside `guard`.
bool intersects(const Span& edit, const Span& guard);

bool intersects_any(const Span& edit, const std::vector<Span>& guards);

// Sorts and unions overlapping or touching spans.
std::vector<Span> merge_spans(std::vector<Span> spans);

// Complement of `spans` within [0, length), assuming merged input.
std::vector<Span> complement(const std::vector<Span>& spans, std::size_t length);

bool is_ascii_alpha(char c);
bool is_ascii_digit(char c);
bool is_ascii_alnum(char c);
bool is_ascii_space(char c);

// True when `pos` does not fall on a UTF-8 continuation byte.
bool is_char_boundary(std::string_view text, std::size_t pos);

std::string to_lower_ascii(std::string_view s);
std::string_view trim(std::string_view s);

// Whitespace-separated tokens.
std::vector<std::string_view> split_whitespace(std::string_view s);

}  // namespace robustmc
