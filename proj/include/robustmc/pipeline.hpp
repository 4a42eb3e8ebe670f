#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "robustmc/corpus.hpp"
#include "robustmc/perturb.hpp"
#include "robustmc/runner.hpp"
#include "robustmc/scoring.hpp"
#include "robustmc/similarity.hpp"
#include "robustmc/stats.hpp"

namespace robustmc {

inline constexpr std::string_view kToolName = "robustmc";
inline constexpr std::string_view kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Output headers

struct InputRef {
  std::string name;  // basename
  std::string sha256;
};

InputRef input_ref(const std::filesystem::path& path);
InputRef input_ref(std::string name, std::string_view content);

// {"header": {tool, version, command, config, config_digest, seeds, inputs}}
nlohmann::ordered_json make_header(std::string_view command, const nlohmann::ordered_json& config,
                                   const nlohmann::ordered_json& seeds, const std::vector<InputRef>& inputs);
// The same header as `#` comment lines for CSV outputs.
std::string csv_comment_header(const nlohmann::ordered_json& header);
// Pretty JSON document with the header object merged in front of `body`.
std::string json_document(const nlohmann::ordered_json& header, const nlohmann::ordered_json& body);

std::string csv_field(std::string_view s);
std::vector<std::vector<std::string>> parse_csv(std::string_view content);
std::string format_real(double v);

// ---------------------------------------------------------------------------
// Perturbed datasets

struct PerturbedRecord {
  PromptRecord record;
  std::string condition;
  std::size_t k_shot = 0;
  std::vector<PerturbationSpec> specs;
  std::string text;
  std::vector<Edit> edits;
  std::vector<ProtectedSpan> protected_spans;
  std::optional<std::string> skipped;
};

nlohmann::ordered_json perturbed_to_json(const PerturbedRecord& r);
PerturbedRecord perturbed_from_json(const nlohmann::json& j);
std::vector<PerturbedRecord> parse_perturbed(std::string_view content);
std::string serialize_perturbed(const nlohmann::ordered_json& header, const std::vector<PerturbedRecord>& records);

struct PerturbSettings {
  // One spec perturbs; two or more compose in order.
  std::vector<PerturbationSpec> specs;
  std::uint64_t seed = 0;
  Targeting targeting = Targeting::stem;
  std::size_t k_shot = 0;
  bool allow_partial = false;
};

// Per-item seed, stable under reordering of the input file.
std::uint64_t item_seed(std::uint64_t seed, std::string_view item_id);
std::string condition_label(const std::vector<PerturbationSpec>& specs);
// Group name for a condition label; compositions map to "composition".
std::optional<std::string> condition_group(std::string_view label);

// Failures that only concern one item (insufficient sites, composition or
// paraphrase errors) are recorded in `skipped` instead of thrown.
PerturbedRecord perturb_record(const PromptRecord& record, const PerturbSettings& settings,
                               const PromptTemplate& tmpl, const PerturbContext& ctx);
std::vector<PerturbedRecord> perturb_dataset(const std::vector<PromptRecord>& records,
                                             const PerturbSettings& settings, const PromptTemplate& tmpl,
                                             const PerturbContext& ctx, std::size_t concurrency = 1);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalPrompt {
  std::string item_id;
  std::string benchmark;
  std::string condition;
  std::string text;
  std::size_t n_options = 0;
  std::size_t gold = 0;
  bool skipped = false;
};

std::vector<EvalPrompt> baseline_prompts(const std::vector<PromptRecord>& records, std::size_t k_shot,
                                         const PromptTemplate& tmpl);
std::vector<EvalPrompt> perturbed_prompts(const std::vector<PerturbedRecord>& records);

struct EvalDiagnostics {
  std::size_t prompts = 0;
  std::size_t skipped = 0;
  std::size_t extraction_failures = 0;
  std::size_t ties = 0;
  std::vector<std::string> warnings;
};

struct EvalResult {
  std::vector<OutcomeMatrix> matrices;  // model order as given, then benchmark
  EvalDiagnostics diagnostics;
};

EvalResult evaluate(const std::vector<EvalPrompt>& prompts, const std::vector<std::shared_ptr<ModelClient>>& models,
                    EvalMode mode, std::size_t concurrency = 1);

nlohmann::ordered_json diagnostics_to_json(const EvalDiagnostics& d);
std::string serialize_outcomes(const nlohmann::ordered_json& header, const std::vector<OutcomeMatrix>& matrices);

// ---------------------------------------------------------------------------
// Endpoints

struct EndpointRegistry {
  std::map<std::string, ModelEndpoint> endpoints;
  RetryPolicy retry;
  TraceSink trace;
  std::shared_ptr<ResponseCache> cache;

  static EndpointRegistry from_config(const nlohmann::json& config);
  // "mock:brittle:<seed>", "mock:robust:<seed>" or a configured endpoint id.
  std::shared_ptr<Backend> backend(const std::string& spec) const;
  std::shared_ptr<ModelClient> client(const std::string& spec) const;
  // "mock-upper" or a configured endpoint id.
  std::unique_ptr<ParaphraseProvider> paraphraser(const std::string& spec, const TemplateLibrary& templates) const;
};

// ---------------------------------------------------------------------------
// Reports

// Paired drop for column j: mean over items with both cells of Y[i][0] - Y[i][j].
struct PairedDrop {
  std::optional<double> drop;
  std::optional<double> accuracy;
  std::size_t items = 0;
};
PairedDrop paired_drop(const OutcomeMatrix& m, std::size_t condition);

nlohmann::ordered_json decomposition_report(const std::vector<OutcomeMatrix>& matrices);
std::string accuracy_csv(const std::vector<OutcomeMatrix>& matrices);
std::vector<TaskAccuracies> task_accuracies(const std::vector<OutcomeMatrix>& matrices,
                                            std::vector<std::string>* models = nullptr);
nlohmann::ordered_json rank_report(const std::vector<OutcomeMatrix>& matrices);
std::string rank_csv(const nlohmann::ordered_json& report);
nlohmann::ordered_json agreement_to_json(const AgreementSuite& s);
nlohmann::ordered_json similarity_to_json(const SimilarityReport& r);

// Annotation CSV: item_id, one column per human rater, optional `judge`.
struct Annotations {
  std::vector<std::string> item_ids;
  std::vector<std::string> raters;
  RatingTable human;
  std::vector<std::optional<int>> judge;
};
Annotations parse_annotations(std::string_view content);

// ---------------------------------------------------------------------------
// Config-driven run

struct RunConfig {
  std::vector<std::filesystem::path> benchmarks;
  std::optional<std::filesystem::path> template_path;
  std::optional<std::filesystem::path> templates_dir;
  std::size_t k_shot = 0;
  Targeting targeting = Targeting::stem;
  std::uint64_t seed = 0;
  // Each entry is one condition; more than one spec composes.
  std::vector<std::vector<PerturbationSpec>> conditions;
  std::vector<std::string> models;
  EvalMode mode = EvalMode::letter;
  std::size_t concurrency = 8;
  bool allow_partial = false;
  std::string paraphrase_provider = "mock-upper";
  nlohmann::json endpoints = nlohmann::json::array();
  std::optional<std::filesystem::path> cache_dir;

  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  // Resolved configuration as recorded in headers (basenames, no output or
  // cache locations).
  nlohmann::ordered_json to_json() const;
};

struct RunOutputs {
  std::vector<std::filesystem::path> written;
};

// perturb -> eval -> decompose -> rank, writing every artifact under `out_dir`.
RunOutputs run_pipeline(const RunConfig& config, const std::filesystem::path& out_dir, TraceSink trace = {});

}  // namespace robustmc
