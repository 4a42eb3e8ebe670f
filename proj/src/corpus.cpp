#include "robustmc/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "robustmc/errors.hpp"

namespace robustmc {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string option_letter(std::size_t i) { return std::string(1, static_cast<char>('A' + i)); }

namespace {

std::string require_text(const json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) throw FormatError(line, field, "missing");
  if (!it->is_string()) throw FormatError(line, field, "expected string");
  auto value = it->get<std::string>();
  return value;
}

std::string require_nonblank(const json& obj, const char* field, std::size_t line) {
  auto value = require_text(obj, field, line);
  if (trim(value).empty()) throw FormatError(line, field, "empty after trimming");
  return value;
}

std::vector<std::string> parse_options(const json& obj, std::size_t line) {
  auto it = obj.find("options");
  if (it == obj.end()) throw FormatError(line, "options", "missing");
  if (!it->is_array()) throw FormatError(line, "options", "expected array");
  if (it->size() < kMinOptions || it->size() > kMaxOptions) {
    throw FormatError(line, "options", "need between 2 and 26 options, got " +
                                           std::to_string(it->size()));
  }
  std::vector<std::string> options;
  for (const auto& o : *it) {
    if (!o.is_string()) throw FormatError(line, "options", "expected string option");
    auto s = o.get<std::string>();
    if (trim(s).empty()) throw FormatError(line, "options", "empty option after trimming");
    options.push_back(std::move(s));
  }
  return options;
}

std::size_t parse_gold(const json& obj, std::size_t n_options, std::size_t line) {
  auto it = obj.find("gold");
  if (it == obj.end()) throw FormatError(line, "gold", "missing");
  if (!it->is_number_integer()) throw FormatError(line, "gold", "expected integer");
  const auto gold = it->get<long long>();
  if (gold < 0 || static_cast<std::size_t>(gold) >= n_options) {
    throw FormatError(line, "gold", "gold out of range");
  }
  return static_cast<std::size_t>(gold);
}

}  // namespace

bool is_header_line(const json& obj) {
  return obj.is_object() && obj.contains("header") && !obj.contains("id");
}

PromptRecord parse_record(const json& obj, std::size_t line) {
  if (!obj.is_object()) throw FormatError(line, "<record>", "expected JSON object");
  PromptRecord r;
  r.id = require_nonblank(obj, "id", line);
  r.benchmark = require_text(obj, "benchmark", line);
  r.stem = require_nonblank(obj, "stem", line);
  r.options = parse_options(obj, line);
  r.gold = parse_gold(obj, r.options.size(), line);

  if (auto it = obj.find("fewshot_pool"); it != obj.end() && !it->is_null()) {
    if (!it->is_array()) throw FormatError(line, "fewshot_pool", "expected array");
    for (const auto& ex : *it) {
      if (!ex.is_object()) throw FormatError(line, "fewshot_pool", "expected object");
      Exemplar e;
      e.stem = require_nonblank(ex, "stem", line);
      e.options = parse_options(ex, line);
      e.gold = parse_gold(ex, e.options.size(), line);
      r.fewshot_pool.push_back(std::move(e));
    }
  }
  if (auto it = obj.find("metadata"); it != obj.end() && !it->is_null()) {
    if (!it->is_object()) throw FormatError(line, "metadata", "expected object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) throw FormatError(line, "metadata", "value for '" + k + "' is not a string");
      r.metadata.emplace(k, v.get<std::string>());
    }
  }
  return r;
}

ordered_json record_to_json(const PromptRecord& r) {
  ordered_json j;
  j["id"] = r.id;
  j["benchmark"] = r.benchmark;
  j["stem"] = r.stem;
  j["options"] = r.options;
  j["gold"] = r.gold;
  if (!r.fewshot_pool.empty()) {
    auto pool = ordered_json::array();
    for (const auto& e : r.fewshot_pool) {
      ordered_json ej;
      ej["stem"] = e.stem;
      ej["options"] = e.options;
      ej["gold"] = e.gold;
      pool.push_back(std::move(ej));
    }
    j["fewshot_pool"] = std::move(pool);
  }
  if (!r.metadata.empty()) {
    ordered_json meta = ordered_json::object();
    for (const auto& [k, v] : r.metadata) meta[k] = v;
    j["metadata"] = std::move(meta);
  }
  return j;
}

std::vector<PromptRecord> parse_benchmark(std::string_view content) {
  std::vector<PromptRecord> records;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    auto line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(line_no, "<json>", e.what());
    }
    if (records.empty() && is_header_line(obj)) continue;
    auto rec = parse_record(obj, line_no);
    if (!seen.insert(rec.id).second) throw FormatError(line_no, "id", "duplicate id '" + rec.id + "'");
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<PromptRecord> load_benchmark(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io_error", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_benchmark(ss.str());
}

std::string serialize_benchmark(const std::vector<PromptRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::string_view to_string(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::instruction: return "instruction";
    case SegmentKind::exemplar: return "exemplar";
    case SegmentKind::stem: return "stem";
    case SegmentKind::option_label: return "option_label";
    case SegmentKind::option_body: return "option_body";
    case SegmentKind::answer_cue: return "answer_cue";
  }
  return "?";
}

std::string_view to_string(ProtectReason reason) {
  switch (reason) {
    case ProtectReason::math: return "math";
    case ProtectReason::code: return "code";
    case ProtectReason::option_label: return "option_label";
    case ProtectReason::answer_cue: return "answer_cue";
  }
  return "?";
}

ProtectReason protect_reason_from_string(std::string_view s) {
  if (s == "math") return ProtectReason::math;
  if (s == "code") return ProtectReason::code;
  if (s == "option_label") return ProtectReason::option_label;
  if (s == "answer_cue") return ProtectReason::answer_cue;
  throw Error("format_error", "unknown protected-span reason '" + std::string(s) + "'");
}

std::vector<Span> spans_of(const std::vector<ProtectedSpan>& spans) {
  std::vector<Span> out;
  out.reserve(spans.size());
  for (const auto& s : spans) out.push_back(s.span);
  return out;
}

std::vector<ProtectedSpan> merge_protected(std::vector<ProtectedSpan> spans) {
  std::erase_if(spans, [](const ProtectedSpan& s) { return s.span.empty(); });
  std::stable_sort(spans.begin(), spans.end(), [](const auto& a, const auto& b) {
    return a.span.begin < b.span.begin;
  });
  std::vector<ProtectedSpan> out;
  for (const auto& s : spans) {
    if (!out.empty() && s.span.begin <= out.back().span.end) {
      out.back().span.end = std::max(out.back().span.end, s.span.end);
    } else {
      out.push_back(s);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompt templates and assembly

PromptTemplate::PromptTemplate(std::string body) : body_(std::move(body)) {}

PromptTemplate PromptTemplate::standard() {
  return PromptTemplate(
      "The following are multiple choice questions (with answers).\n\n"
      "{exemplars}{stem}\n{options}\n{answer_cue}");
}

PromptTemplate PromptTemplate::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TemplateError("cannot open template " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return PromptTemplate(ss.str());
}

namespace {

struct TemplatePart {
  bool placeholder;
  std::string text;  // literal text or placeholder name
};

bool is_placeholder_char(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }

std::vector<TemplatePart> split_template(const std::string& body) {
  std::vector<TemplatePart> parts;
  std::string literal;
  std::size_t i = 0;
  while (i < body.size()) {
    if (body[i] == '{') {
      std::size_t j = i + 1;
      while (j < body.size() && is_placeholder_char(body[j])) ++j;
      if (j < body.size() && body[j] == '}' && j > i + 1) {
        if (!literal.empty()) parts.push_back({false, std::move(literal)});
        literal.clear();
        parts.push_back({true, body.substr(i + 1, j - i - 1)});
        i = j + 1;
        continue;
      }
    }
    literal.push_back(body[i++]);
  }
  if (!literal.empty()) parts.push_back({false, std::move(literal)});
  return parts;
}

bool has_non_space(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char c) { return !is_ascii_space(c); });
}

class PromptBuilder {
 public:
  AssembledPrompt out;
  std::vector<ProtectedSpan> structural;

  Span append(std::string_view s) {
    Span span{out.text.size(), out.text.size() + s.size()};
    out.text.append(s);
    return span;
  }

  void segment(SegmentKind kind, Span span) { out.segments.push_back({kind, span}); }

  // Writes "A. body\nB. body..." recording label and body segments when
  // `record_segments` is set.
  void options(const std::vector<std::string>& opts, bool record_segments) {
    for (std::size_t i = 0; i < opts.size(); ++i) {
      if (i > 0) append("\n");
      auto label = append(option_letter(i) + ".");
      structural.push_back({label, ProtectReason::option_label});
      append(" ");
      auto body = append(opts[i]);
      if (record_segments) {
        segment(SegmentKind::option_label, label);
        segment(SegmentKind::option_body, body);
      }
    }
  }
};

}  // namespace

Span AssembledPrompt::stem() const {
  for (const auto& s : segments) {
    if (s.kind == SegmentKind::stem) return s.span;
  }
  return {};
}

AssembledPrompt assemble_prompt(const PromptRecord& record, std::size_t k,
                                const std::vector<Exemplar>& exemplars,
                                const PromptTemplate& tmpl) {
  if (k > exemplars.size()) {
    throw TemplateError("k_shot " + std::to_string(k) + " exceeds " +
                        std::to_string(exemplars.size()) + " available exemplars");
  }
  const auto parts = split_template(tmpl.body());
  std::map<std::string, int> counts;
  for (const auto& p : parts) {
    if (!p.placeholder) continue;
    if (p.text != "stem" && p.text != "options" && p.text != "answer_cue" && p.text != "exemplars") {
      throw TemplateError("unresolved placeholder {" + p.text + "}");
    }
    ++counts[p.text];
  }
  for (const char* required : {"stem", "options", "answer_cue"}) {
    if (counts[required] != 1) {
      throw TemplateError(std::string("template must contain {") + required + "} exactly once");
    }
  }
  if (counts["exemplars"] > 1) throw TemplateError("template repeats {exemplars}");
  if (k > 0 && counts["exemplars"] == 0) throw TemplateError("k_shot > 0 but template lacks {exemplars}");

  PromptBuilder b;
  b.out.k_shot = k;
  for (const auto& p : parts) {
    if (!p.placeholder) {
      auto span = b.append(p.text);
      if (has_non_space(p.text)) b.segment(SegmentKind::instruction, span);
      continue;
    }
    if (p.text == "stem") {
      b.segment(SegmentKind::stem, b.append(record.stem));
    } else if (p.text == "options") {
      b.options(record.options, true);
    } else if (p.text == "answer_cue") {
      auto span = b.append(PromptTemplate::kAnswerCue);
      b.segment(SegmentKind::answer_cue, span);
      b.structural.push_back({span, ProtectReason::answer_cue});
    } else {
      for (std::size_t i = 0; i < k; ++i) {
        const auto& ex = exemplars[i];
        const auto start = b.out.text.size();
        b.out.exemplar_stems.push_back(b.append(ex.stem));
        b.append("\n");
        b.options(ex.options, false);
        b.append("\n");
        auto answer = b.append(std::string(PromptTemplate::kAnswerCue) + " " + option_letter(ex.gold));
        b.structural.push_back({answer, ProtectReason::answer_cue});
        b.segment(SegmentKind::exemplar, {start, b.out.text.size()});
        b.append("\n\n");
      }
    }
  }

  auto detected = detect_protected(b.out.text);
  detected.insert(detected.end(), b.structural.begin(), b.structural.end());
  b.out.protected_spans = merge_protected(std::move(detected));
  return std::move(b.out);
}

// ---------------------------------------------------------------------------
// Protected-span detection

namespace {

constexpr std::string_view kUnicodeMinus = "\xE2\x88\x92";

bool is_operator_at(std::string_view text, std::size_t i, std::size_t& len) {
  static constexpr std::string_view kAsciiOps = "=+*/^_%";
  if (kAsciiOps.find(text[i]) != std::string_view::npos) {
    len = 1;
    return true;
  }
  if (text.substr(i, kUnicodeMinus.size()) == kUnicodeMinus) {
    len = kUnicodeMinus.size();
    return true;
  }
  return false;
}

bool at_line_start(std::string_view text, std::size_t i) { return i == 0 || text[i - 1] == '\n'; }

void delimited_spans(std::string_view text, std::vector<ProtectedSpan>& out) {
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '\\' && i + 1 < text.size() && text[i + 1] == '$') {
      i += 2;
      continue;
    }
    std::string_view close;
    std::size_t open_len = 0;
    ProtectReason reason = ProtectReason::math;
    if (c == '$') {
      const bool display = i + 1 < text.size() && text[i + 1] == '$';
      close = display ? "$$" : "$";
      open_len = close.size();
    } else if (c == '\\' && i + 1 < text.size() && (text[i + 1] == '(' || text[i + 1] == '[')) {
      close = text[i + 1] == '(' ? "\\)" : "\\]";
      open_len = 2;
    } else if (c == '`') {
      std::size_t run = 0;
      while (i + run < text.size() && text[i + run] == '`') ++run;
      // Closing run must be exactly as long as the opening one.
      std::size_t j = i + run;
      bool found = false;
      while (j < text.size()) {
        if (text[j] != '`') {
          ++j;
          continue;
        }
        std::size_t r = 0;
        while (j + r < text.size() && text[j + r] == '`') ++r;
        if (r == run) {
          out.push_back({{i, j + r}, ProtectReason::code});
          i = j + r;
          found = true;
          break;
        }
        j += r;
      }
      if (!found) i += run;
      continue;
    } else {
      ++i;
      continue;
    }
    const auto end = text.find(close, i + open_len);
    if (end == std::string_view::npos) {
      i += open_len;
      continue;
    }
    out.push_back({{i, end + close.size()}, reason});
    i = end + close.size();
  }
}

void operator_tokens(std::string_view text, std::vector<ProtectedSpan>& out) {
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_ascii_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_ascii_space(text[i])) ++i;
    bool hit = false;
    for (std::size_t p = start; p < i && !hit; ++p) {
      std::size_t len = 0;
      if (!is_operator_at(text, p, len)) continue;
      const bool before = p > start && is_ascii_digit(text[p - 1]);
      const bool after = p + len < i && is_ascii_digit(text[p + len]);
      hit = before || after;
    }
    if (hit) out.push_back({{start, i}, ProtectReason::math});
  }
}

void structural_markers(std::string_view text, std::vector<ProtectedSpan>& out) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!at_line_start(text, i)) continue;
    if (i + 2 < text.size() && text[i] >= 'A' && text[i] <= 'Z' && text[i + 1] == '.' &&
        text[i + 2] == ' ') {
      out.push_back({{i, i + 2}, ProtectReason::option_label});
    } else if (text.substr(i, PromptTemplate::kAnswerCue.size()) == PromptTemplate::kAnswerCue) {
      out.push_back({{i, i + PromptTemplate::kAnswerCue.size()}, ProtectReason::answer_cue});
    }
  }
}

}  // namespace

std::vector<ProtectedSpan> detect_protected(std::string_view text) {
  std::vector<ProtectedSpan> spans;
  delimited_spans(text, spans);
  operator_tokens(text, spans);
  structural_markers(text, spans);
  return merge_protected(std::move(spans));
}

}  // namespace robustmc
