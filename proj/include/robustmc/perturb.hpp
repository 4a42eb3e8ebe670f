#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "robustmc/corpus.hpp"
#include "robustmc/text.hpp"

namespace robustmc {

enum class PerturbationKind {
  typos,
  drop_stopwords,
  punctuation_spaces,
  sequence_spaces,
  word_merge,
  word_split,
  pad_quotes,
  pad_spaces,
  pad_newlines,
  persona,
  emotion,
  paraphrase_lexical,
  paraphrase_syntactic,
  paraphrase_rulefree,
};

enum class PerturbationGroup { word_manipulation, prompt_padding, context_augmentation, paraphrasing };

std::string_view to_string(PerturbationKind kind);
std::string_view to_string(PerturbationGroup group);
PerturbationKind kind_from_string(std::string_view name);
const std::vector<PerturbationKind>& all_kinds();

PerturbationGroup group_of(PerturbationKind kind);
// Kinds whose intensity counts edit sites (and can run out of them).
bool is_countable(PerturbationKind kind);
bool is_padding(PerturbationKind kind);
bool is_paraphrase(PerturbationKind kind);
// 1 for countable kinds, 3 for padding width.
std::size_t default_intensity(PerturbationKind kind);

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::typos;
  std::size_t intensity = 1;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> params;

  static PerturbationSpec make(PerturbationKind kind, std::uint64_t seed = 0);

  PerturbationGroup group() const { return group_of(kind); }
  // Intensity after clamping paraphrase kinds to a single application.
  std::size_t effective_intensity() const;
  // Condition label, e.g. "typos@2", "pad_quotes@3", "persona".
  std::string label() const;

  friend bool operator==(const PerturbationSpec&, const PerturbationSpec&) = default;
};

nlohmann::ordered_json spec_to_json(const PerturbationSpec& spec);
PerturbationSpec spec_from_json(const nlohmann::json& j);

enum class EditOp {
  typo_transpose,
  typo_delete,
  typo_duplicate,
  drop_stopword,
  punctuation_space,
  widen_gap,
  merge_words,
  split_word,
  pad,
  prepend,
  append,
  paraphrase,
};
std::string_view to_string(EditOp op);
EditOp edit_op_from_string(std::string_view s);

// Replace `source` (coordinates of the step's input text) by `replacement`.
// `site` is the byte offset of the eligible site the edit was drawn for.
struct Edit {
  Span source;
  std::string replacement;
  EditOp op = EditOp::pad;
  std::size_t step = 0;
  std::size_t site = 0;

  friend bool operator==(const Edit&, const Edit&) = default;
};

struct PerturbedPrompt {
  std::string text;
  std::string parent_id;
  std::vector<PerturbationSpec> specs;
  std::vector<Edit> edits;
  std::vector<ProtectedSpan> protected_spans;

  std::size_t steps() const { return specs.size(); }
  std::vector<Edit> edits_for_step(std::size_t step) const;
};

// Applies one step's edits (sorted, non-overlapping) to `text`.
std::string apply_edits(std::string_view text, const std::vector<Edit>& edits);
// Replays every step of `p` starting from the parent text.
std::string replay(std::string_view parent, const PerturbedPrompt& p);
// Output-coordinate spans of the bytes a step wrote.
std::vector<Span> written_spans(const std::vector<Edit>& step_edits);
// Moves `span` through a step's edits. Insertions at span.begin land before
// the span and insertions at span.end land after it.
Span remap_span(const Span& span, const std::vector<Edit>& step_edits);

enum class ParaphraseMode { lexical, syntactic, rulefree };
std::string_view to_string(ParaphraseMode mode);

class ParaphraseProvider {
 public:
  virtual ~ParaphraseProvider() = default;
  virtual std::string id() const = 0;
  virtual std::string rewrite(ParaphraseMode mode, std::string_view text) = 0;
};

// Offline test double: ASCII uppercase of the input.
class UppercaseParaphraser final : public ParaphraseProvider {
 public:
  std::string id() const override { return "mock-upper"; }
  std::string rewrite(ParaphraseMode mode, std::string_view text) override;
};

// Paraphrase results keyed by (mode, input digest, provider id). In memory,
// optionally persisted one file per entry under `dir`.
class ParaphraseCache {
 public:
  ParaphraseCache() = default;
  explicit ParaphraseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  static std::string key(ParaphraseMode mode, std::string_view text, std::string_view provider_id);
  std::optional<std::string> get(const std::string& key);
  void put(const std::string& key, const std::string& value);

 private:
  std::optional<std::filesystem::path> dir_;
  std::mutex mu_;
  std::map<std::string, std::string> memory_;
};

// Persona, emotion and paraphrase-instruction texts by id. Built-in "default"
// entries are always present; `load_dir` reads `<dir>/<category>/<id>.txt`.
class TemplateLibrary {
 public:
  TemplateLibrary();
  static TemplateLibrary load_dir(const std::filesystem::path& dir);

  const std::string& persona(const std::string& id) const;
  const std::string& emotion(const std::string& id) const;
  const std::string& paraphrase(ParaphraseMode mode) const;
  void set(const std::string& category, const std::string& id, std::string text);

 private:
  const std::string& lookup(const std::string& category, const std::string& id) const;
  std::map<std::string, std::map<std::string, std::string>> entries_;
};

// The shipped stopword list, version 1.
const std::vector<std::string>& stopwords_v1();
const std::unordered_set<std::string>& stopword_set_v1();
inline constexpr std::string_view kStopwordsVersion = "en_v1";

struct PerturbContext {
  // Use all available sites instead of failing when fewer than `intensity`.
  bool allow_partial = false;
  const TemplateLibrary* templates = nullptr;
  ParaphraseProvider* provider = nullptr;
  ParaphraseCache* cache = nullptr;
  std::string item_id;
};

enum class Targeting { stem, stem_and_exemplars };
std::string_view to_string(Targeting t);
Targeting targeting_from_string(std::string_view s);

// Text plus the regions word-level kinds may edit. Empty targets means the
// whole text.
struct PerturbInput {
  std::string text;
  std::vector<ProtectedSpan> protected_spans;
  std::vector<Span> targets;
  std::string parent_id;

  static PerturbInput plain(std::string text, std::vector<ProtectedSpan> protected_spans = {});
  static PerturbInput from_assembled(const AssembledPrompt& prompt, Targeting targeting,
                                     std::string parent_id);
};

PerturbedPrompt apply_perturbation(const PerturbInput& input, const PerturbationSpec& spec,
                                   const PerturbContext& ctx = {});

// Applies specs in order; bytes written by earlier steps are locked against
// later steps. Step i runs with seed derive_seed(seed, i).
PerturbedPrompt compose(const std::vector<PerturbationSpec>& specs, const PerturbInput& input,
                        std::uint64_t seed, const PerturbContext& ctx = {});

// Intensities 1..max_intensity with the same seed. Site sets are nested.
std::vector<PerturbedPrompt> sweep(PerturbationKind kind, const PerturbInput& input,
                                   std::size_t max_intensity, std::uint64_t seed,
                                   const PerturbContext& ctx = {},
                                   const std::map<std::string, std::string>& params = {});

// Single-kind entry points over plain text.
PerturbedPrompt perturb_typos(std::string_view text, const std::vector<ProtectedSpan>& prot,
                              std::size_t n, std::uint64_t seed, const PerturbContext& ctx = {});
PerturbedPrompt perturb_drop_stopwords(std::string_view text, const std::vector<ProtectedSpan>& prot,
                                       std::size_t n, std::uint64_t seed,
                                       const PerturbContext& ctx = {});
PerturbedPrompt perturb_punctuation_spaces(std::string_view text,
                                           const std::vector<ProtectedSpan>& prot);
PerturbedPrompt perturb_sequence_spaces(std::string_view text, const std::vector<ProtectedSpan>& prot,
                                        std::size_t n, std::uint64_t seed, std::size_t run_len = 3,
                                        const PerturbContext& ctx = {});
PerturbedPrompt perturb_word_merge(std::string_view text, const std::vector<ProtectedSpan>& prot,
                                   std::size_t n, std::uint64_t seed, const PerturbContext& ctx = {});
PerturbedPrompt perturb_word_split(std::string_view text, const std::vector<ProtectedSpan>& prot,
                                   std::size_t n, std::uint64_t seed, const PerturbContext& ctx = {});

enum class PadKind { quotes, spaces, newlines };
PerturbedPrompt pad_prompt(std::string_view text, PadKind kind, std::size_t n);
PerturbedPrompt augment_persona(std::string_view text, const std::string& template_id = "default",
                                const TemplateLibrary* templates = nullptr,
                                const std::string& domain = "this field");
PerturbedPrompt augment_emotion(std::string_view text, const std::string& template_id = "default",
                                const TemplateLibrary* templates = nullptr);
PerturbedPrompt paraphrase(std::string_view text, const std::vector<ProtectedSpan>& prot,
                           ParaphraseMode mode, ParaphraseProvider& provider,
                           ParaphraseCache* cache = nullptr, const std::string& item_id = "");

// Eligible-site enumeration, exposed for tests and the CLI's dry runs.
std::vector<Span> eligible_sites(const PerturbInput& input, const PerturbationSpec& spec);

}  // namespace robustmc
