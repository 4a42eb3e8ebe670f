#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "robustmc/text.hpp"

namespace robustmc {

struct Exemplar {
  std::string stem;
  std::vector<std::string> options;
  std::size_t gold = 0;

  friend bool operator==(const Exemplar&, const Exemplar&) = default;
};

// One multiple-choice benchmark item.
struct PromptRecord {
  std::string id;
  std::string benchmark;
  std::string stem;
  std::vector<std::string> options;
  std::size_t gold = 0;
  std::vector<Exemplar> fewshot_pool;
  std::map<std::string, std::string> metadata;

  friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

inline constexpr std::size_t kMinOptions = 2;
inline constexpr std::size_t kMaxOptions = 26;

// "A", "B", ... for option index i.
std::string option_letter(std::size_t i);

// Parses and validates one benchmark line. `line` is 1-based and only used
// for error messages.
PromptRecord parse_record(const nlohmann::json& obj, std::size_t line);
nlohmann::ordered_json record_to_json(const PromptRecord& record);

// Line-delimited records. Blank lines are skipped, as is a leading
// {"header": ...} line written by our own tools.
std::vector<PromptRecord> parse_benchmark(std::string_view content);
std::vector<PromptRecord> load_benchmark(const std::filesystem::path& path);
std::string serialize_benchmark(const std::vector<PromptRecord>& records);

// True for a line object that is a file header rather than a record.
bool is_header_line(const nlohmann::json& obj);

enum class SegmentKind { instruction, exemplar, stem, option_label, option_body, answer_cue };
std::string_view to_string(SegmentKind kind);

struct Segment {
  SegmentKind kind;
  Span span;
};

enum class ProtectReason { math, code, option_label, answer_cue };
std::string_view to_string(ProtectReason reason);
ProtectReason protect_reason_from_string(std::string_view s);

struct ProtectedSpan {
  Span span;
  ProtectReason reason;

  friend bool operator==(const ProtectedSpan&, const ProtectedSpan&) = default;
};

std::vector<Span> spans_of(const std::vector<ProtectedSpan>& spans);

// Unions overlapping or touching spans; a merged span keeps the reason of
// its earliest member.
std::vector<ProtectedSpan> merge_protected(std::vector<ProtectedSpan> spans);

// Layout with placeholders {stem}, {options}, {answer_cue}, {exemplars}.
// Literal text between placeholders is treated as instruction text.
class PromptTemplate {
 public:
  static constexpr std::string_view kAnswerCue = "Answer:";

  explicit PromptTemplate(std::string body);
  static PromptTemplate standard();
  static PromptTemplate from_file(const std::filesystem::path& path);

  const std::string& body() const { return body_; }

 private:
  std::string body_;
};

struct AssembledPrompt {
  std::string text;
  std::vector<Segment> segments;
  std::vector<ProtectedSpan> protected_spans;
  std::size_t k_shot = 0;
  // Stems of the few-shot exemplars, inside their exemplar segments.
  std::vector<Span> exemplar_stems;

  Span stem() const;
};

// Deterministic: identical inputs give byte-identical text. Uses the first
// `k` exemplars.
AssembledPrompt assemble_prompt(const PromptRecord& record, std::size_t k,
                                const std::vector<Exemplar>& exemplars,
                                const PromptTemplate& tmpl);

// Heuristic math/code/structure detector. Returns sorted, non-overlapping
// spans for `$...$`, `$$...$$`, `\(...\)`, `\[...\]` and backtick runs,
// whitespace tokens holding an operator next to a digit, line-initial
// option labels ("B.") and line-initial answer cues.
std::vector<ProtectedSpan> detect_protected(std::string_view text);

}  // namespace robustmc
