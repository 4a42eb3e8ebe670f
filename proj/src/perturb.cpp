#include "robustmc/perturb.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "robustmc/digest.hpp"
#include "robustmc/errors.hpp"
#include "robustmc/io.hpp"
#include "robustmc/rng.hpp"

namespace robustmc {

using ordered_json = nlohmann::ordered_json;

namespace {

struct KindInfo {
  PerturbationKind kind;
  std::string_view name;
  PerturbationGroup group;
};

constexpr KindInfo kKinds[] = {
    {PerturbationKind::typos, "typos", PerturbationGroup::word_manipulation},
    {PerturbationKind::drop_stopwords, "drop_stopwords", PerturbationGroup::word_manipulation},
    {PerturbationKind::punctuation_spaces, "punctuation_spaces", PerturbationGroup::word_manipulation},
    {PerturbationKind::sequence_spaces, "sequence_spaces", PerturbationGroup::word_manipulation},
    {PerturbationKind::word_merge, "word_merge", PerturbationGroup::word_manipulation},
    {PerturbationKind::word_split, "word_split", PerturbationGroup::word_manipulation},
    {PerturbationKind::pad_quotes, "pad_quotes", PerturbationGroup::prompt_padding},
    {PerturbationKind::pad_spaces, "pad_spaces", PerturbationGroup::prompt_padding},
    {PerturbationKind::pad_newlines, "pad_newlines", PerturbationGroup::prompt_padding},
    {PerturbationKind::persona, "persona", PerturbationGroup::context_augmentation},
    {PerturbationKind::emotion, "emotion", PerturbationGroup::context_augmentation},
    {PerturbationKind::paraphrase_lexical, "paraphrase_lexical", PerturbationGroup::paraphrasing},
    {PerturbationKind::paraphrase_syntactic, "paraphrase_syntactic", PerturbationGroup::paraphrasing},
    {PerturbationKind::paraphrase_rulefree, "paraphrase_rulefree", PerturbationGroup::paraphrasing},
};

const KindInfo& info(PerturbationKind kind) {
  for (const auto& k : kKinds) {
    if (k.kind == kind) return k;
  }
  throw Error("internal", "unknown perturbation kind");
}

}  // namespace

std::string_view to_string(PerturbationKind kind) { return info(kind).name; }

std::string_view to_string(PerturbationGroup group) {
  switch (group) {
    case PerturbationGroup::word_manipulation: return "word_manipulation";
    case PerturbationGroup::prompt_padding: return "prompt_padding";
    case PerturbationGroup::context_augmentation: return "context_augmentation";
    case PerturbationGroup::paraphrasing: return "paraphrasing";
  }
  return "?";
}

PerturbationKind kind_from_string(std::string_view name) {
  for (const auto& k : kKinds) {
    if (k.name == name) return k.kind;
  }
  throw UsageError("unknown perturbation kind '" + std::string(name) + "'");
}

const std::vector<PerturbationKind>& all_kinds() {
  static const std::vector<PerturbationKind> kAll = [] {
    std::vector<PerturbationKind> v;
    for (const auto& k : kKinds) v.push_back(k.kind);
    return v;
  }();
  return kAll;
}

PerturbationGroup group_of(PerturbationKind kind) { return info(kind).group; }

bool is_countable(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::typos:
    case PerturbationKind::drop_stopwords:
    case PerturbationKind::sequence_spaces:
    case PerturbationKind::word_merge:
    case PerturbationKind::word_split:
      return true;
    default:
      return false;
  }
}

bool is_padding(PerturbationKind kind) { return group_of(kind) == PerturbationGroup::prompt_padding; }
bool is_paraphrase(PerturbationKind kind) { return group_of(kind) == PerturbationGroup::paraphrasing; }

std::size_t default_intensity(PerturbationKind kind) { return is_padding(kind) ? 3 : 1; }

PerturbationSpec PerturbationSpec::make(PerturbationKind kind, std::uint64_t seed) {
  PerturbationSpec s;
  s.kind = kind;
  s.intensity = default_intensity(kind);
  s.seed = seed;
  return s;
}

std::size_t PerturbationSpec::effective_intensity() const {
  return is_paraphrase(kind) ? 1 : intensity;
}

std::string PerturbationSpec::label() const {
  std::string s(to_string(kind));
  if (is_countable(kind) || is_padding(kind)) s += "@" + std::to_string(intensity);
  return s;
}

ordered_json spec_to_json(const PerturbationSpec& spec) {
  ordered_json j;
  j["kind"] = to_string(spec.kind);
  j["intensity"] = spec.intensity;
  j["seed"] = spec.seed;
  ordered_json params = ordered_json::object();
  for (const auto& [k, v] : spec.params) params[k] = v;
  j["params"] = std::move(params);
  j["group"] = to_string(spec.group());
  j["label"] = spec.label();
  return j;
}

PerturbationSpec spec_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("kind")) throw UsageError("perturbation spec needs a 'kind'");
  auto spec = PerturbationSpec::make(kind_from_string(j.at("kind").get<std::string>()));
  if (j.contains("intensity")) spec.intensity = j.at("intensity").get<std::size_t>();
  if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("params")) {
    for (const auto& [k, v] : j.at("params").items()) {
      spec.params[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
  }
  if (spec.intensity == 0) throw UsageError("intensity must be >= 1");
  return spec;
}

std::string_view to_string(EditOp op) {
  switch (op) {
    case EditOp::typo_transpose: return "typo_transpose";
    case EditOp::typo_delete: return "typo_delete";
    case EditOp::typo_duplicate: return "typo_duplicate";
    case EditOp::drop_stopword: return "drop_stopword";
    case EditOp::punctuation_space: return "punctuation_space";
    case EditOp::widen_gap: return "widen_gap";
    case EditOp::merge_words: return "merge_words";
    case EditOp::split_word: return "split_word";
    case EditOp::pad: return "pad";
    case EditOp::prepend: return "prepend";
    case EditOp::append: return "append";
    case EditOp::paraphrase: return "paraphrase";
  }
  return "?";
}

EditOp edit_op_from_string(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(EditOp::paraphrase); ++i) {
    auto op = static_cast<EditOp>(i);
    if (to_string(op) == s) return op;
  }
  throw Error("format_error", "unknown edit op '" + std::string(s) + "'");
}

std::string_view to_string(ParaphraseMode mode) {
  switch (mode) {
    case ParaphraseMode::lexical: return "lexical";
    case ParaphraseMode::syntactic: return "syntactic";
    case ParaphraseMode::rulefree: return "rulefree";
  }
  return "?";
}

std::string_view to_string(Targeting t) {
  return t == Targeting::stem ? "stem" : "stem+exemplars";
}

Targeting targeting_from_string(std::string_view s) {
  if (s == "stem") return Targeting::stem;
  if (s == "stem+exemplars") return Targeting::stem_and_exemplars;
  throw UsageError("unknown targeting '" + std::string(s) + "' (expected stem or stem+exemplars)");
}

// ---------------------------------------------------------------------------
// Edit logs

std::vector<Edit> PerturbedPrompt::edits_for_step(std::size_t step) const {
  std::vector<Edit> out;
  for (const auto& e : edits) {
    if (e.step == step) out.push_back(e);
  }
  return out;
}

std::string apply_edits(std::string_view text, const std::vector<Edit>& edits) {
  std::string out;
  out.reserve(text.size());
  std::size_t cursor = 0;
  const Edit* prev = nullptr;
  for (const auto& e : edits) {
    if (e.source.begin > e.source.end || e.source.end > text.size()) {
      throw Error("edit_error", "edit span out of bounds");
    }
    if (e.source.begin < cursor) throw Error("edit_error", "edits overlap or are unsorted");
    if (prev != nullptr && prev->source.empty() && e.source.empty() &&
        prev->source.begin == e.source.begin) {
      throw Error("edit_error", "two insertions at the same offset");
    }
    out.append(text.substr(cursor, e.source.begin - cursor));
    out.append(e.replacement);
    cursor = e.source.end;
    prev = &e;
  }
  out.append(text.substr(cursor));
  return out;
}

std::string replay(std::string_view parent, const PerturbedPrompt& p) {
  std::string text(parent);
  for (std::size_t step = 0; step < p.steps(); ++step) text = apply_edits(text, p.edits_for_step(step));
  return text;
}

std::vector<Span> written_spans(const std::vector<Edit>& step_edits) {
  std::vector<Span> out;
  std::ptrdiff_t offset = 0;
  for (const auto& e : step_edits) {
    const auto pos = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(e.source.begin) + offset);
    if (!e.replacement.empty()) out.push_back({pos, pos + e.replacement.size()});
    offset += static_cast<std::ptrdiff_t>(e.replacement.size()) -
              static_cast<std::ptrdiff_t>(e.source.size());
  }
  return out;
}

Span remap_span(const Span& span, const std::vector<Edit>& step_edits) {
  std::ptrdiff_t begin_shift = 0;
  std::ptrdiff_t end_shift = 0;
  for (const auto& e : step_edits) {
    const auto delta = static_cast<std::ptrdiff_t>(e.replacement.size()) -
                       static_cast<std::ptrdiff_t>(e.source.size());
    if (e.source.end <= span.begin) begin_shift += delta;
    if (e.source.begin < span.end) end_shift += delta;
  }
  if (span.empty()) end_shift = begin_shift;
  return {static_cast<std::size_t>(static_cast<std::ptrdiff_t>(span.begin) + begin_shift),
          static_cast<std::size_t>(static_cast<std::ptrdiff_t>(span.end) + end_shift)};
}

// ---------------------------------------------------------------------------
// Paraphrase plumbing

std::string UppercaseParaphraser::rewrite(ParaphraseMode, std::string_view text) {
  std::string out(text);
  for (auto& c : out) {
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  }
  return out;
}

std::string ParaphraseCache::key(ParaphraseMode mode, std::string_view text,
                                 std::string_view provider_id) {
  std::string material(to_string(mode));
  material += '\0';
  material += sha256_hex(text);
  material += '\0';
  material += provider_id;
  return sha256_hex(material);
}

std::optional<std::string> ParaphraseCache::get(const std::string& key) {
  {
    std::lock_guard lock(mu_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  }
  if (!dir_) return std::nullopt;
  const auto path = *dir_ / key.substr(0, 2) / (key + ".json");
  auto content = read_file_if_exists(path);
  if (!content) return std::nullopt;
  auto j = nlohmann::json::parse(*content);
  auto value = j.at("output").get<std::string>();
  std::lock_guard lock(mu_);
  memory_[key] = value;
  return value;
}

void ParaphraseCache::put(const std::string& key, const std::string& value) {
  {
    std::lock_guard lock(mu_);
    memory_[key] = value;
  }
  if (!dir_) return;
  ordered_json j;
  j["key"] = key;
  j["output"] = value;
  write_file_atomic(*dir_ / key.substr(0, 2) / (key + ".json"), j.dump() + "\n");
}

TemplateLibrary::TemplateLibrary() {
  entries_["persona"]["default"] = "You are an expert in {domain}. ";
  entries_["emotion"]["default"] = "This is very important to my career.";
  entries_["paraphrase"]["lexical"] =
      "Rewrite the question below by replacing words with synonyms only. Keep the sentence "
      "structure and meaning. Copy every marker of the form [[n]] unchanged and in the same "
      "order. Output only the rewritten question.\n\n{text}";
  entries_["paraphrase"]["syntactic"] =
      "Rewrite the question below by restructuring its clauses while keeping the original "
      "words wherever possible and preserving the meaning. Copy every marker of the form [[n]] "
      "unchanged and in the same order. Output only the rewritten question.\n\n{text}";
  entries_["paraphrase"]["rulefree"] =
      "Paraphrase the question below in any way you like while preserving its meaning and its "
      "answer. Copy every marker of the form [[n]] unchanged and in the same order. Output only "
      "the rewritten question.\n\n{text}";
}

TemplateLibrary TemplateLibrary::load_dir(const std::filesystem::path& dir) {
  TemplateLibrary lib;
  for (const char* category : {"persona", "emotion", "paraphrase"}) {
    const auto sub = dir / category;
    if (!std::filesystem::is_directory(sub)) continue;
    for (const auto& entry : std::filesystem::directory_iterator(sub)) {
      if (entry.path().extension() != ".txt") continue;
      auto text = read_file(entry.path());
      // Asset files end with a newline that is not part of the template.
      if (!text.empty() && text.back() == '\n') text.pop_back();
      lib.set(category, entry.path().stem().string(), std::move(text));
    }
  }
  return lib;
}

void TemplateLibrary::set(const std::string& category, const std::string& id, std::string text) {
  entries_[category][id] = std::move(text);
}

const std::string& TemplateLibrary::lookup(const std::string& category, const std::string& id) const {
  auto c = entries_.find(category);
  if (c != entries_.end()) {
    auto it = c->second.find(id);
    if (it != c->second.end()) return it->second;
  }
  throw TemplateError("no " + category + " template '" + id + "'");
}

const std::string& TemplateLibrary::persona(const std::string& id) const { return lookup("persona", id); }
const std::string& TemplateLibrary::emotion(const std::string& id) const { return lookup("emotion", id); }
const std::string& TemplateLibrary::paraphrase(ParaphraseMode mode) const {
  return lookup("paraphrase", std::string(to_string(mode)));
}

// ---------------------------------------------------------------------------
// Site enumeration and edit planning

namespace {

const TemplateLibrary& default_templates() {
  static const TemplateLibrary kLib;
  return kLib;
}

bool is_word_boundary_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return !(is_ascii_alnum(c) || c == '_' || u >= 0x80);
}

// Maximal ASCII-letter runs whose neighbours are not letters, digits,
// underscores or non-ASCII bytes.
std::vector<Span> find_words(std::string_view text) {
  std::vector<Span> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_ascii_alpha(text[i])) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < text.size() && is_ascii_alpha(text[i])) ++i;
    const bool left_ok = start == 0 || is_word_boundary_byte(text[start - 1]);
    const bool right_ok = i == text.size() || is_word_boundary_byte(text[i]);
    if (left_ok && right_ok) out.push_back({start, i});
  }
  return out;
}

// Maximal runs of ' ' with a non-whitespace byte on both sides.
std::vector<Span> find_gaps(std::string_view text) {
  std::vector<Span> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != ' ') {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < text.size() && text[i] == ' ') ++i;
    if (start > 0 && i < text.size() && !is_ascii_space(text[start - 1]) && !is_ascii_space(text[i])) {
      out.push_back({start, i});
    }
  }
  return out;
}

bool token_is_only_word(std::string_view text, const Span& word) {
  for (std::size_t p = word.begin; p > 0 && !is_ascii_space(text[p - 1]); --p) {
    if (!is_word_boundary_byte(text[p - 1])) return false;
  }
  for (std::size_t p = word.end; p < text.size() && !is_ascii_space(text[p]); ++p) {
    if (!is_word_boundary_byte(text[p])) return false;
  }
  return true;
}

constexpr std::string_view kPunctuation = ".,;:?!";

std::size_t run_length_param(const PerturbationSpec& spec) {
  auto it = spec.params.find("run_len");
  if (it == spec.params.end()) return 3;
  std::size_t k = 0;
  try {
    k = std::stoul(it->second);
  } catch (const std::exception&) {
    throw UsageError("run_len must be a positive integer");
  }
  if (k == 0) throw UsageError("run_len must be >= 1");
  return k;
}

std::string param_or(const PerturbationSpec& spec, const std::string& key, std::string fallback) {
  auto it = spec.params.find(key);
  return it == spec.params.end() ? fallback : it->second;
}

std::vector<Span> countable_sites(std::string_view text, const std::vector<Span>& blocked,
                                  const PerturbationSpec& spec) {
  std::vector<Span> out;
  auto keep = [&](const Span& s) { return !intersects_any(s, blocked); };
  switch (spec.kind) {
    case PerturbationKind::typos:
    case PerturbationKind::word_split:
      for (const auto& w : find_words(text)) {
        if (w.size() >= 4 && keep(w)) out.push_back(w);
      }
      break;
    case PerturbationKind::drop_stopwords: {
      const auto& stop = stopword_set_v1();
      for (const auto& w : find_words(text)) {
        if (!keep(w) || !token_is_only_word(text, w)) continue;
        if (stop.count(to_lower_ascii(text.substr(w.begin, w.size()))) != 0) out.push_back(w);
      }
      break;
    }
    case PerturbationKind::sequence_spaces: {
      const auto k = run_length_param(spec);
      for (const auto& g : find_gaps(text)) {
        if (g.size() <= k && keep(g)) out.push_back(g);
      }
      break;
    }
    case PerturbationKind::word_merge:
      for (const auto& g : find_gaps(text)) {
        if (is_ascii_alpha(text[g.begin - 1]) && is_ascii_alpha(text[g.end]) && keep(g)) out.push_back(g);
      }
      break;
    default:
      break;
  }
  return out;
}

// Indices into the site list, in draw order (a prefix of one permutation).
std::vector<std::size_t> choose_sites(std::size_t available, const PerturbationSpec& spec,
                                      bool allow_partial) {
  const auto wanted = spec.intensity;
  if (available < wanted && !allow_partial) {
    throw InsufficientSites(std::string(to_string(spec.kind)), wanted, available);
  }
  auto perm = seeded_permutation(available, derive_seed(spec.seed, 0));
  perm.resize(std::min(wanted, available));
  return perm;
}

SplitMix64 rank_generator(std::uint64_t seed, std::size_t rank) {
  return SplitMix64(derive_seed(derive_seed(seed, 1), rank));
}

Edit typo_edit(std::string_view text, const Span& word, SplitMix64& g) {
  const auto w = text.substr(word.begin, word.size());
  const auto len = w.size();
  auto cls = g.below(3);
  if (cls == 0) {
    std::vector<std::size_t> pairs;
    for (std::size_t j = 1; j + 2 <= len - 1; ++j) {
      if (w[j] != w[j + 1]) pairs.push_back(j);
    }
    if (!pairs.empty()) {
      const auto j = pairs[g.below(pairs.size())];
      std::string rep{w[j + 1], w[j]};
      return {{word.begin + j, word.begin + j + 2}, rep, EditOp::typo_transpose, 0, word.begin};
    }
    cls = 1;
  }
  const auto j = 1 + static_cast<std::size_t>(g.below(len - 2));
  if (cls == 1) return {{word.begin + j, word.begin + j + 1}, "", EditOp::typo_delete, 0, word.begin};
  return {{word.begin + j, word.begin + j + 1}, std::string(2, w[j]), EditOp::typo_duplicate, 0,
          word.begin};
}

std::vector<Edit> plan_countable(std::string_view text, const std::vector<Span>& blocked,
                                 const PerturbationSpec& spec, bool allow_partial) {
  const auto sites = countable_sites(text, blocked, spec);
  const auto chosen = choose_sites(sites.size(), spec, allow_partial);
  std::vector<Edit> edits;

  switch (spec.kind) {
    case PerturbationKind::typos:
      for (std::size_t rank = 0; rank < chosen.size(); ++rank) {
        auto g = rank_generator(spec.seed, rank);
        edits.push_back(typo_edit(text, sites[chosen[rank]], g));
      }
      break;
    case PerturbationKind::word_split:
      for (std::size_t rank = 0; rank < chosen.size(); ++rank) {
        auto g = rank_generator(spec.seed, rank);
        const auto& w = sites[chosen[rank]];
        const auto p = w.begin + 1 + static_cast<std::size_t>(g.below(w.size() - 1));
        edits.push_back({{p, p}, " ", EditOp::split_word, 0, w.begin});
      }
      break;
    case PerturbationKind::word_merge:
      for (auto idx : chosen) {
        edits.push_back({sites[idx], "", EditOp::merge_words, 0, sites[idx].begin});
      }
      break;
    case PerturbationKind::sequence_spaces: {
      const auto k = run_length_param(spec);
      for (auto idx : chosen) {
        const auto& g = sites[idx];
        edits.push_back({{g.end, g.end}, std::string(k + 1 - g.size(), ' '), EditOp::widen_gap, 0, g.begin});
      }
      break;
    }
    case PerturbationKind::drop_stopwords: {
      std::vector<Span> words;
      for (auto idx : chosen) words.push_back(sites[idx]);
      std::sort(words.begin(), words.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
      std::set<std::size_t> claimed;
      auto space_free = [&](std::size_t pos) {
        return pos < text.size() && text[pos] == ' ' && claimed.count(pos) == 0 &&
               !intersects_any({pos, pos + 1}, blocked);
      };
      for (const auto& w : words) {
        Span del = w;
        if (space_free(w.end)) {
          del.end = w.end + 1;
          claimed.insert(w.end);
        } else if (w.begin > 0 && space_free(w.begin - 1)) {
          del.begin = w.begin - 1;
          claimed.insert(w.begin - 1);
        }
        edits.push_back({del, "", EditOp::drop_stopword, 0, w.begin});
      }
      break;
    }
    default:
      break;
  }
  return edits;
}

std::vector<Edit> plan_punctuation(std::string_view text, const std::vector<Span>& blocked) {
  std::map<std::size_t, std::size_t> inserts;  // position -> site
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (kPunctuation.find(text[i]) == std::string_view::npos) continue;
    if (intersects_any({i, i + 1}, blocked)) continue;
    if (i > 0 && i + 1 < text.size() && is_ascii_digit(text[i - 1]) && is_ascii_digit(text[i + 1])) continue;
    if (i > 0 && !is_ascii_space(text[i - 1]) && !intersects_any({i, i}, blocked)) inserts.emplace(i, i);
    if (i + 1 < text.size() && !is_ascii_space(text[i + 1]) && !intersects_any({i + 1, i + 1}, blocked)) {
      inserts.emplace(i + 1, i);
    }
  }
  std::vector<Edit> edits;
  for (const auto& [pos, site] : inserts) edits.push_back({{pos, pos}, " ", EditOp::punctuation_space, 0, site});
  return edits;
}

std::vector<Edit> plan_padding(std::string_view text, const PerturbationSpec& spec) {
  char c = '"';
  if (spec.kind == PerturbationKind::pad_spaces) c = ' ';
  if (spec.kind == PerturbationKind::pad_newlines) c = '\n';
  const std::string pad(spec.intensity, c);
  return {{{0, 0}, pad, EditOp::pad, 0, 0}, {{text.size(), text.size()}, pad, EditOp::pad, 0, text.size()}};
}

std::vector<Edit> plan_augmentation(std::string_view text, const PerturbationSpec& spec,
                                    const TemplateLibrary& lib) {
  const auto id = param_or(spec, "template", "default");
  if (spec.kind == PerturbationKind::persona) {
    auto t = lib.persona(id);
    const auto domain = param_or(spec, "domain", "this field");
    for (auto pos = t.find("{domain}"); pos != std::string::npos; pos = t.find("{domain}", pos + domain.size())) {
      t.replace(pos, 8, domain);
    }
    return {{{0, 0}, t, EditOp::prepend, 0, 0}};
  }
  return {{{text.size(), text.size()}, " " + lib.emotion(id), EditOp::append, 0, text.size()}};
}

ParaphraseMode mode_of(PerturbationKind kind) {
  if (kind == PerturbationKind::paraphrase_syntactic) return ParaphraseMode::syntactic;
  if (kind == PerturbationKind::paraphrase_rulefree) return ParaphraseMode::rulefree;
  return ParaphraseMode::lexical;
}

std::string placeholder(std::size_t i) { return "[[" + std::to_string(i) + "]]"; }

// Rewrites one region, keeping blocked bytes out of the provider's sight.
std::vector<Edit> plan_paraphrase_region(std::string_view text, const Span& region,
                                         const std::vector<Span>& blocked, ParaphraseMode mode,
                                         const PerturbContext& ctx) {
  std::vector<Span> holes;
  for (const auto& b : blocked) {
    const Span clipped{std::max(b.begin, region.begin), std::min(b.end, region.end)};
    if (clipped.begin < clipped.end) holes.push_back(clipped);
  }
  std::vector<Span> chunks;
  std::size_t cursor = region.begin;
  for (const auto& h : holes) {
    chunks.push_back({cursor, h.begin});
    cursor = h.end;
  }
  chunks.push_back({cursor, region.end});

  std::string masked;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    masked.append(text.substr(chunks[i].begin, chunks[i].size()));
    if (i < holes.size()) masked += placeholder(i);
  }
  if (trim(masked).empty()) return {};

  std::string output;
  const auto key = ParaphraseCache::key(mode, masked, ctx.provider->id());
  if (auto hit = ctx.cache ? ctx.cache->get(key) : std::nullopt) {
    output = *hit;
  } else {
    try {
      output = std::string(trim(ctx.provider->rewrite(mode, masked)));
    } catch (const std::exception& e) {
      throw ParaphraseError(ctx.item_id, e.what());
    }
    if (ctx.cache) ctx.cache->put(key, output);
  }

  // Split the rewrite back at the placeholders, which must survive in order.
  std::vector<std::string> pieces;
  std::size_t from = 0;
  for (std::size_t i = 0; i < holes.size(); ++i) {
    const auto ph = placeholder(i);
    const auto at = output.find(ph, from);
    if (at == std::string::npos) throw ParaphraseError(ctx.item_id, "rewrite dropped or reordered " + ph);
    pieces.push_back(output.substr(from, at - from));
    from = at + ph.size();
  }
  pieces.push_back(output.substr(from));
  if (output.find("[[" + std::to_string(holes.size()) + "]]") != std::string::npos) {
    throw ParaphraseError(ctx.item_id, "rewrite invented a placeholder");
  }

  std::vector<Edit> edits;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (text.substr(chunks[i].begin, chunks[i].size()) == pieces[i]) continue;
    edits.push_back({chunks[i], pieces[i], EditOp::paraphrase, 0, chunks[i].begin});
  }
  return edits;
}

struct WorkingState {
  std::string text;
  std::vector<ProtectedSpan> protected_spans;
  std::vector<Span> targets;
  std::vector<Span> locked;
};

std::vector<Span> blocked_spans(const WorkingState& st, bool restrict_to_targets) {
  auto blocked = spans_of(st.protected_spans);
  blocked.insert(blocked.end(), st.locked.begin(), st.locked.end());
  if (restrict_to_targets && !st.targets.empty()) {
    auto outside = complement(merge_spans(st.targets), st.text.size());
    blocked.insert(blocked.end(), outside.begin(), outside.end());
  }
  return merge_spans(std::move(blocked));
}

std::vector<Edit> plan_step(const WorkingState& st, const PerturbationSpec& spec,
                            const PerturbContext& ctx) {
  if (st.text.empty()) throw UsageError("cannot perturb empty text");
  const auto& lib = ctx.templates ? *ctx.templates : default_templates();
  switch (group_of(spec.kind)) {
    case PerturbationGroup::word_manipulation: {
      const auto blocked = blocked_spans(st, true);
      if (spec.kind == PerturbationKind::punctuation_spaces) return plan_punctuation(st.text, blocked);
      return plan_countable(st.text, blocked, spec, ctx.allow_partial);
    }
    case PerturbationGroup::prompt_padding:
      return plan_padding(st.text, spec);
    case PerturbationGroup::context_augmentation:
      return plan_augmentation(st.text, spec, lib);
    case PerturbationGroup::paraphrasing: {
      if (ctx.provider == nullptr) throw ParaphraseError(ctx.item_id, "no paraphrase provider configured");
      const auto blocked = blocked_spans(st, false);
      std::vector<Span> regions = st.targets.empty() ? std::vector<Span>{{0, st.text.size()}}
                                                     : merge_spans(st.targets);
      std::vector<Edit> edits;
      for (const auto& r : regions) {
        auto part = plan_paraphrase_region(st.text, r, blocked, mode_of(spec.kind), ctx);
        edits.insert(edits.end(), part.begin(), part.end());
      }
      return edits;
    }
  }
  return {};
}

void run_step(WorkingState& st, const PerturbationSpec& spec, std::size_t step,
              const PerturbContext& ctx, std::vector<Edit>& log) {
  auto edits = plan_step(st, spec, ctx);
  std::sort(edits.begin(), edits.end(), [](const Edit& a, const Edit& b) {
    return a.source.begin != b.source.begin ? a.source.begin < b.source.begin
                                            : a.source.end < b.source.end;
  });
  const auto prot = spans_of(st.protected_spans);
  for (auto& e : edits) {
    e.step = step;
    if (intersects_any(e.source, prot) || intersects_any(e.source, st.locked)) {
      throw Error("internal", "planned edit touches a protected span");
    }
  }
  auto next_text = apply_edits(st.text, edits);
  for (auto& p : st.protected_spans) p.span = remap_span(p.span, edits);
  for (auto& t : st.targets) t = remap_span(t, edits);
  for (auto& l : st.locked) l = remap_span(l, edits);
  for (const auto& w : written_spans(edits)) st.locked.push_back(w);
  st.locked = merge_spans(std::move(st.locked));
  st.text = std::move(next_text);
  log.insert(log.end(), edits.begin(), edits.end());
}

WorkingState initial_state(const PerturbInput& input) {
  WorkingState st;
  st.text = input.text;
  st.protected_spans = merge_protected(input.protected_spans);
  st.targets = merge_spans(input.targets);
  return st;
}

PerturbationSpec paraphrase_clamped(PerturbationSpec spec) {
  spec.intensity = spec.effective_intensity();
  return spec;
}

}  // namespace

PerturbInput PerturbInput::plain(std::string text, std::vector<ProtectedSpan> protected_spans) {
  PerturbInput in;
  in.text = std::move(text);
  in.protected_spans = std::move(protected_spans);
  return in;
}

PerturbInput PerturbInput::from_assembled(const AssembledPrompt& prompt, Targeting targeting,
                                          std::string parent_id) {
  PerturbInput in;
  in.text = prompt.text;
  in.protected_spans = prompt.protected_spans;
  in.targets.push_back(prompt.stem());
  if (targeting == Targeting::stem_and_exemplars) {
    in.targets.insert(in.targets.end(), prompt.exemplar_stems.begin(), prompt.exemplar_stems.end());
  }
  in.parent_id = std::move(parent_id);
  return in;
}

std::vector<Span> eligible_sites(const PerturbInput& input, const PerturbationSpec& spec) {
  const auto st = initial_state(input);
  if (group_of(spec.kind) != PerturbationGroup::word_manipulation) return {};
  const auto blocked = blocked_spans(st, true);
  if (spec.kind == PerturbationKind::punctuation_spaces) {
    std::vector<Span> out;
    for (const auto& e : plan_punctuation(st.text, blocked)) {
      if (out.empty() || out.back().begin != e.site) out.push_back({e.site, e.site + 1});
    }
    return out;
  }
  return countable_sites(st.text, blocked, spec);
}

PerturbedPrompt apply_perturbation(const PerturbInput& input, const PerturbationSpec& spec,
                                   const PerturbContext& ctx) {
  auto st = initial_state(input);
  PerturbedPrompt out;
  out.parent_id = input.parent_id;
  const auto effective = paraphrase_clamped(spec);
  out.specs.push_back(effective);
  run_step(st, effective, 0, ctx, out.edits);
  out.text = std::move(st.text);
  out.protected_spans = std::move(st.protected_spans);
  return out;
}

PerturbedPrompt compose(const std::vector<PerturbationSpec>& specs, const PerturbInput& input,
                        std::uint64_t seed, const PerturbContext& ctx) {
  if (specs.size() < 2) throw UsageError("compose needs at least two perturbations");
  auto st = initial_state(input);
  PerturbedPrompt out;
  out.parent_id = input.parent_id;
  for (std::size_t step = 0; step < specs.size(); ++step) {
    auto spec = paraphrase_clamped(specs[step]);
    spec.seed = derive_seed(seed, step);
    out.specs.push_back(spec);
    try {
      run_step(st, spec, step, ctx, out.edits);
    } catch (const InsufficientSites& e) {
      throw CompositionError(step, e.what());
    }
  }
  out.text = std::move(st.text);
  out.protected_spans = std::move(st.protected_spans);
  return out;
}

std::vector<PerturbedPrompt> sweep(PerturbationKind kind, const PerturbInput& input,
                                   std::size_t max_intensity, std::uint64_t seed,
                                   const PerturbContext& ctx,
                                   const std::map<std::string, std::string>& params) {
  std::vector<PerturbedPrompt> out;
  for (std::size_t n = 1; n <= max_intensity; ++n) {
    auto spec = PerturbationSpec::make(kind, seed);
    spec.intensity = n;
    spec.params = params;
    out.push_back(apply_perturbation(input, spec, ctx));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Single-kind entry points

namespace {

PerturbedPrompt run_plain(std::string_view text, const std::vector<ProtectedSpan>& prot,
                          PerturbationKind kind, std::size_t n, std::uint64_t seed,
                          const PerturbContext& ctx,
                          std::map<std::string, std::string> params = {}) {
  auto spec = PerturbationSpec::make(kind, seed);
  spec.intensity = n;
  spec.params = std::move(params);
  return apply_perturbation(PerturbInput::plain(std::string(text), prot), spec, ctx);
}

}  // namespace

PerturbedPrompt perturb_typos(std::string_view text, const std::vector<ProtectedSpan>& prot,
                              std::size_t n, std::uint64_t seed, const PerturbContext& ctx) {
  return run_plain(text, prot, PerturbationKind::typos, n, seed, ctx);
}

PerturbedPrompt perturb_drop_stopwords(std::string_view text, const std::vector<ProtectedSpan>& prot,
                                       std::size_t n, std::uint64_t seed, const PerturbContext& ctx) {
  return run_plain(text, prot, PerturbationKind::drop_stopwords, n, seed, ctx);
}

PerturbedPrompt perturb_punctuation_spaces(std::string_view text,
                                           const std::vector<ProtectedSpan>& prot) {
  return run_plain(text, prot, PerturbationKind::punctuation_spaces, 1, 0, {});
}

PerturbedPrompt perturb_sequence_spaces(std::string_view text, const std::vector<ProtectedSpan>& prot,
                                        std::size_t n, std::uint64_t seed, std::size_t run_len,
                                        const PerturbContext& ctx) {
  return run_plain(text, prot, PerturbationKind::sequence_spaces, n, seed, ctx,
                   {{"run_len", std::to_string(run_len)}});
}

PerturbedPrompt perturb_word_merge(std::string_view text, const std::vector<ProtectedSpan>& prot,
                                   std::size_t n, std::uint64_t seed, const PerturbContext& ctx) {
  return run_plain(text, prot, PerturbationKind::word_merge, n, seed, ctx);
}

PerturbedPrompt perturb_word_split(std::string_view text, const std::vector<ProtectedSpan>& prot,
                                   std::size_t n, std::uint64_t seed, const PerturbContext& ctx) {
  return run_plain(text, prot, PerturbationKind::word_split, n, seed, ctx);
}

PerturbedPrompt pad_prompt(std::string_view text, PadKind kind, std::size_t n) {
  const auto k = kind == PadKind::quotes   ? PerturbationKind::pad_quotes
                 : kind == PadKind::spaces ? PerturbationKind::pad_spaces
                                           : PerturbationKind::pad_newlines;
  return run_plain(text, {}, k, n, 0, {});
}

PerturbedPrompt augment_persona(std::string_view text, const std::string& template_id,
                                const TemplateLibrary* templates, const std::string& domain) {
  PerturbContext ctx;
  ctx.templates = templates;
  return run_plain(text, {}, PerturbationKind::persona, 1, 0, ctx,
                   {{"template", template_id}, {"domain", domain}});
}

PerturbedPrompt augment_emotion(std::string_view text, const std::string& template_id,
                                const TemplateLibrary* templates) {
  PerturbContext ctx;
  ctx.templates = templates;
  return run_plain(text, {}, PerturbationKind::emotion, 1, 0, ctx, {{"template", template_id}});
}

PerturbedPrompt paraphrase(std::string_view text, const std::vector<ProtectedSpan>& prot,
                           ParaphraseMode mode, ParaphraseProvider& provider, ParaphraseCache* cache,
                           const std::string& item_id) {
  PerturbContext ctx;
  ctx.provider = &provider;
  ctx.cache = cache;
  ctx.item_id = item_id;
  const auto kind = mode == ParaphraseMode::lexical     ? PerturbationKind::paraphrase_lexical
                    : mode == ParaphraseMode::syntactic ? PerturbationKind::paraphrase_syntactic
                                                        : PerturbationKind::paraphrase_rulefree;
  return run_plain(text, prot, kind, 1, 0, ctx);
}

}  // namespace robustmc
