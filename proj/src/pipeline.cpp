#include "robustmc/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "robustmc/digest.hpp"
#include "robustmc/errors.hpp"
#include "robustmc/io.hpp"
#include "robustmc/rng.hpp"
#include "robustmc/text.hpp"

namespace robustmc {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Headers and formatting

InputRef input_ref(const fs::path& path) { return input_ref(path.filename().string(), read_file(path)); }

InputRef input_ref(std::string name, std::string_view content) {
  return InputRef{std::move(name), sha256_hex(content)};
}

ordered_json make_header(std::string_view command, const ordered_json& config, const ordered_json& seeds,
                         const std::vector<InputRef>& inputs) {
  ordered_json h;
  h["tool"] = kToolName;
  h["version"] = kToolVersion;
  h["command"] = command;
  h["config"] = config;
  h["config_digest"] = sha256_hex(config.dump());
  h["seeds"] = seeds;
  auto refs = ordered_json::array();
  for (const auto& in : inputs) refs.push_back({{"name", in.name}, {"sha256", in.sha256}});
  h["inputs"] = std::move(refs);
  ordered_json out;
  out["header"] = std::move(h);
  return out;
}

std::string csv_comment_header(const ordered_json& header) {
  const auto& h = header.at("header");
  std::string out = "# " + h.at("tool").get<std::string>() + " " + h.at("version").get<std::string>() + " " +
                    h.at("command").get<std::string>() + "\n";
  out += "# config_digest " + h.at("config_digest").get<std::string>() + "\n";
  out += "# config " + h.at("config").dump() + "\n";
  out += "# seeds " + h.at("seeds").dump() + "\n";
  for (const auto& in : h.at("inputs")) {
    out += "# input " + in.at("name").get<std::string>() + " " + in.at("sha256").get<std::string>() + "\n";
  }
  return out;
}

std::string json_document(const ordered_json& header, const ordered_json& body) {
  ordered_json doc;
  doc["header"] = header.at("header");
  for (const auto& [k, v] : body.items()) doc[k] = v;
  return doc.dump(2) + "\n";
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view content) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool row_has_data = false;
  for (std::size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      row_has_data = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      row_has_data = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < content.size() && content[i + 1] == '\n') ++i;
      if (row_has_data || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      row_has_data = false;
    } else {
      field += c;
      row_has_data = true;
    }
  }
  if (quoted) throw Error("format_error", "unterminated quoted CSV field");
  if (row_has_data || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

// ---------------------------------------------------------------------------
// Perturbed datasets

ordered_json perturbed_to_json(const PerturbedRecord& r) {
  ordered_json j;
  j["id"] = r.record.id;
  j["parent_id"] = r.record.id;
  j["benchmark"] = r.record.benchmark;
  j["condition"] = r.condition;
  j["stem"] = r.record.stem;
  j["options"] = r.record.options;
  j["gold"] = r.record.gold;
  ordered_json meta = ordered_json::object();
  for (const auto& [k, v] : r.record.metadata) meta[k] = v;
  j["metadata"] = std::move(meta);
  j["k_shot"] = r.k_shot;
  auto specs = ordered_json::array();
  for (const auto& s : r.specs) specs.push_back(spec_to_json(s));
  j["perturbation"] = std::move(specs);
  if (r.skipped) {
    j["skipped"] = *r.skipped;
    return j;
  }
  j["text"] = r.text;
  auto edits = ordered_json::array();
  for (const auto& e : r.edits) {
    ordered_json ej;
    ej["begin"] = e.source.begin;
    ej["end"] = e.source.end;
    ej["replacement"] = e.replacement;
    ej["op"] = to_string(e.op);
    ej["step"] = e.step;
    ej["site"] = e.site;
    edits.push_back(std::move(ej));
  }
  j["edits"] = std::move(edits);
  auto prot = ordered_json::array();
  for (const auto& p : r.protected_spans) {
    ordered_json pj;
    pj["begin"] = p.span.begin;
    pj["end"] = p.span.end;
    pj["reason"] = to_string(p.reason);
    prot.push_back(std::move(pj));
  }
  j["protected"] = std::move(prot);
  return j;
}

PerturbedRecord perturbed_from_json(const json& j) {
  PerturbedRecord r;
  r.record.id = j.at("id").get<std::string>();
  r.record.benchmark = j.at("benchmark").get<std::string>();
  r.record.stem = j.at("stem").get<std::string>();
  r.record.options = j.at("options").get<std::vector<std::string>>();
  r.record.gold = j.at("gold").get<std::size_t>();
  if (r.record.options.size() < kMinOptions || r.record.options.size() > kMaxOptions) {
    throw UsageError("option count out of range");
  }
  if (r.record.gold >= r.record.options.size()) throw UsageError("gold out of range");
  if (j.contains("metadata")) {
    for (const auto& [k, v] : j.at("metadata").items()) r.record.metadata[k] = v.get<std::string>();
  }
  r.condition = j.at("condition").get<std::string>();
  r.k_shot = j.value("k_shot", std::size_t{0});
  for (const auto& s : j.at("perturbation")) r.specs.push_back(spec_from_json(s));
  if (j.contains("skipped")) {
    r.skipped = j.at("skipped").get<std::string>();
    return r;
  }
  r.text = j.at("text").get<std::string>();
  for (const auto& e : j.value("edits", json::array())) {
    Edit ed;
    ed.source = {e.at("begin").get<std::size_t>(), e.at("end").get<std::size_t>()};
    ed.replacement = e.at("replacement").get<std::string>();
    ed.op = edit_op_from_string(e.at("op").get<std::string>());
    ed.step = e.at("step").get<std::size_t>();
    ed.site = e.at("site").get<std::size_t>();
    r.edits.push_back(std::move(ed));
  }
  for (const auto& p : j.value("protected", json::array())) {
    r.protected_spans.push_back({{p.at("begin").get<std::size_t>(), p.at("end").get<std::size_t>()},
                                 protect_reason_from_string(p.at("reason").get<std::string>())});
  }
  return r;
}

std::vector<PerturbedRecord> parse_perturbed(std::string_view content) {
  std::vector<PerturbedRecord> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    const auto line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      if (is_header_line(j)) continue;
      out.push_back(perturbed_from_json(j));
    } catch (const json::exception& e) {
      throw FormatError(line_no, "<perturbed>", e.what());
    } catch (const UsageError& e) {
      throw FormatError(line_no, "<perturbed>", e.what());
    }
  }
  return out;
}

std::string serialize_perturbed(const ordered_json& header, const std::vector<PerturbedRecord>& records) {
  std::string out = header.dump() + "\n";
  for (const auto& r : records) out += perturbed_to_json(r).dump() + "\n";
  return out;
}

std::uint64_t item_seed(std::uint64_t seed, std::string_view item_id) {
  return derive_seed(seed, sha256_u64(item_id));
}

std::string condition_label(const std::vector<PerturbationSpec>& specs) {
  std::string out;
  for (const auto& s : specs) {
    if (!out.empty()) out += "+";
    out += s.label();
  }
  return out;
}

std::optional<std::string> condition_group(std::string_view label) {
  if (label == kBaselineCondition) return std::nullopt;
  if (label.find('+') != std::string_view::npos) return "composition";
  const auto name = label.substr(0, label.find('@'));
  try {
    return std::string(to_string(group_of(kind_from_string(name))));
  } catch (const UsageError&) {
    return std::nullopt;
  }
}

PerturbedRecord perturb_record(const PromptRecord& record, const PerturbSettings& settings,
                               const PromptTemplate& tmpl, const PerturbContext& ctx) {
  if (settings.specs.empty()) throw UsageError("no perturbation given");
  PerturbedRecord out;
  out.record = record;
  out.record.fewshot_pool.clear();
  out.condition = condition_label(settings.specs);
  out.k_shot = settings.k_shot;

  const auto prompt = assemble_prompt(record, settings.k_shot, record.fewshot_pool, tmpl);
  const auto input = PerturbInput::from_assembled(prompt, settings.targeting, record.id);
  auto item_ctx = ctx;
  item_ctx.item_id = record.id;
  item_ctx.allow_partial = settings.allow_partial;
  const auto seed = item_seed(settings.seed, record.id);
  try {
    PerturbedPrompt p;
    if (settings.specs.size() == 1) {
      auto spec = settings.specs.front();
      spec.seed = seed;
      p = apply_perturbation(input, spec, item_ctx);
    } else {
      p = compose(settings.specs, input, seed, item_ctx);
    }
    out.specs = std::move(p.specs);
    out.text = std::move(p.text);
    out.edits = std::move(p.edits);
    out.protected_spans = std::move(p.protected_spans);
  } catch (const InsufficientSites& e) {
    out.skipped = e.kind() + ": " + e.what();
  } catch (const CompositionError& e) {
    out.skipped = e.kind() + ": " + e.what();
  } catch (const ParaphraseError& e) {
    out.skipped = e.kind() + ": " + e.what();
  }
  if (out.skipped) {
    out.specs = settings.specs;
    for (auto& s : out.specs) s.seed = seed;
  }
  return out;
}

std::vector<PerturbedRecord> perturb_dataset(const std::vector<PromptRecord>& records,
                                             const PerturbSettings& settings, const PromptTemplate& tmpl,
                                             const PerturbContext& ctx, std::size_t concurrency) {
  std::vector<PerturbedRecord> out(records.size());
  parallel_for(records.size(), concurrency,
               [&](std::size_t i) { out[i] = perturb_record(records[i], settings, tmpl, ctx); });
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<EvalPrompt> baseline_prompts(const std::vector<PromptRecord>& records, std::size_t k_shot,
                                         const PromptTemplate& tmpl) {
  std::vector<EvalPrompt> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    EvalPrompt p;
    p.item_id = r.id;
    p.benchmark = r.benchmark;
    p.condition = std::string(kBaselineCondition);
    p.text = assemble_prompt(r, k_shot, r.fewshot_pool, tmpl).text;
    p.n_options = r.options.size();
    p.gold = r.gold;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<EvalPrompt> perturbed_prompts(const std::vector<PerturbedRecord>& records) {
  std::vector<EvalPrompt> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    EvalPrompt p;
    p.item_id = r.record.id;
    p.benchmark = r.record.benchmark;
    p.condition = r.condition;
    p.text = r.text;
    p.n_options = r.record.options.size();
    p.gold = r.record.gold;
    p.skipped = r.skipped.has_value();
    out.push_back(std::move(p));
  }
  return out;
}

EvalResult evaluate(const std::vector<EvalPrompt>& prompts, const std::vector<std::shared_ptr<ModelClient>>& models,
                    EvalMode mode, std::size_t concurrency) {
  for (const auto& m : models) {
    if (!m->endpoint().supports(mode)) {
      throw CapabilityError("endpoint " + m->endpoint().id + " does not support " + std::string(to_string(mode)) +
                            " mode");
    }
  }
  const auto n_prompts = prompts.size();
  std::vector<std::optional<std::size_t>> chosen(models.size() * n_prompts);
  std::vector<char> ties(models.size() * n_prompts, 0);
  parallel_for(models.size() * n_prompts, concurrency, [&](std::size_t idx) {
    const auto& p = prompts[idx % n_prompts];
    auto& client = *models[idx / n_prompts];
    if (p.skipped) return;
    if (mode == EvalMode::letter) {
      chosen[idx] = extract_letter(client.complete_letter(p.text), p.n_options);
      return;
    }
    std::vector<double> scores;
    for (std::size_t o = 0; o < p.n_options; ++o) scores.push_back(client.score_option(p.text, " " + option_letter(o)));
    const auto pick = judge_logprob(scores, p.n_options);
    chosen[idx] = pick.index;
    ties[idx] = pick.tie ? 1 : 0;
  });

  EvalResult out;
  out.diagnostics.prompts = n_prompts * models.size();
  std::set<std::string> benchmarks;
  for (const auto& p : prompts) benchmarks.insert(p.benchmark);
  for (std::size_t m = 0; m < models.size(); ++m) {
    const auto& model_id = models[m]->endpoint().id;
    for (const auto& bench : benchmarks) {
      std::vector<ItemResult> results;
      for (std::size_t i = 0; i < n_prompts; ++i) {
        const auto& p = prompts[i];
        if (p.benchmark != bench) continue;
        const auto idx = m * n_prompts + i;
        if (p.skipped) {
          ++out.diagnostics.skipped;
        } else if (!chosen[idx]) {
          ++out.diagnostics.extraction_failures;
        }
        out.diagnostics.ties += static_cast<std::size_t>(ties[idx]);
        results.push_back(ItemResult{p.item_id, p.condition, chosen[idx], p.gold});
      }
      auto built = build_outcome_matrix(model_id, bench, results);
      for (auto& w : built.warnings) out.diagnostics.warnings.push_back(model_id + "/" + bench + ": " + w);
      out.matrices.push_back(std::move(built.matrix));
    }
  }
  return out;
}

ordered_json diagnostics_to_json(const EvalDiagnostics& d) {
  ordered_json j;
  j["prompts"] = d.prompts;
  j["skipped"] = d.skipped;
  j["extraction_failures"] = d.extraction_failures;
  j["logprob_ties"] = d.ties;
  j["warnings"] = d.warnings;
  return j;
}

std::string serialize_outcomes(const ordered_json& header, const std::vector<OutcomeMatrix>& matrices) {
  std::string out = header.dump() + "\n";
  for (const auto& m : matrices) out += outcome_to_json(m).dump() + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Endpoints

EndpointRegistry EndpointRegistry::from_config(const json& config) {
  EndpointRegistry reg;
  if (config.contains("endpoints")) {
    for (const auto& e : config.at("endpoints")) {
      auto ep = endpoint_from_json(e);
      if (ep.id.starts_with("mock")) throw UsageError("endpoint ids starting with 'mock' are reserved");
      reg.endpoints[ep.id] = std::move(ep);
    }
  }
  return reg;
}

std::shared_ptr<Backend> EndpointRegistry::backend(const std::string& spec) const {
  if (spec.starts_with("mock:")) {
    const auto parts = spec.substr(5);
    const auto colon = parts.find(':');
    const auto flavour = parts.substr(0, colon);
    if (flavour != "brittle" && flavour != "robust") {
      throw UsageError("mock endpoint must be mock:brittle:<seed> or mock:robust:<seed>, got '" + spec + "'");
    }
    std::uint64_t seed = 0;
    if (colon != std::string::npos) {
      const auto s = parts.substr(colon + 1);
      const auto res = std::from_chars(s.data(), s.data() + s.size(), seed);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw UsageError("bad mock seed in '" + spec + "'");
      }
    }
    return mock_model(seed, flavour == "brittle");
  }
  const auto it = endpoints.find(spec);
  if (it == endpoints.end()) throw UsageError("unknown endpoint '" + spec + "'");
  return std::make_shared<HttpBackend>(it->second, retry, trace);
}

std::shared_ptr<ModelClient> EndpointRegistry::client(const std::string& spec) const {
  return std::make_shared<ModelClient>(backend(spec), cache);
}

std::unique_ptr<ParaphraseProvider> EndpointRegistry::paraphraser(const std::string& spec,
                                                                  const TemplateLibrary& templates) const {
  if (spec == "mock-upper") return std::make_unique<UppercaseParaphraser>();
  const auto it = endpoints.find(spec);
  if (it == endpoints.end()) throw UsageError("unknown paraphrase provider '" + spec + "'");
  return std::make_unique<ChatParaphraser>(std::make_shared<HttpBackend>(it->second, retry, trace), templates);
}

// ---------------------------------------------------------------------------
// Reports

PairedDrop paired_drop(const OutcomeMatrix& m, std::size_t condition) {
  PairedDrop out;
  long diff = 0;
  long correct = 0;
  for (std::size_t i = 0; i < m.n_items(); ++i) {
    const auto base = m.cell(i, 0);
    const auto v = m.cell(i, condition);
    if (base == OutcomeMatrix::kMissing || v == OutcomeMatrix::kMissing) continue;
    ++out.items;
    diff += base - v;
    correct += v;
  }
  if (out.items > 0) {
    out.drop = static_cast<double>(diff) / static_cast<double>(out.items);
    out.accuracy = static_cast<double>(correct) / static_cast<double>(out.items);
  }
  return out;
}

namespace {

std::map<std::string, std::string> grouping_for(const OutcomeMatrix& m) {
  std::map<std::string, std::string> g;
  for (const auto& c : m.conditions) {
    if (auto group = condition_group(c)) g[c] = *group;
  }
  return g;
}

ordered_json accuracy_row_json(const AccuracyRow& r) {
  ordered_json j;
  j["label"] = r.label;
  j["cells"] = r.cells;
  j["accuracy"] = optional_json(r.accuracy);
  j["drop"] = optional_json(r.drop);
  j["drop_points"] = r.drop ? json(format_points(*r.drop)) : json(nullptr);
  return j;
}

ordered_json brittleness_json(const std::vector<BrittlenessScore>& scores) {
  auto arr = ordered_json::array();
  for (const auto& s : scores) {
    ordered_json j;
    j["subject"] = s.subject;
    j["pi"] = optional_json(s.pi);
    j["numerator"] = s.numerator;
    j["denominator"] = s.denominator;
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace

ordered_json decomposition_report(const std::vector<OutcomeMatrix>& matrices) {
  ordered_json body;
  auto pairs = ordered_json::array();
  auto accuracy = ordered_json::array();
  std::vector<VarianceComponents> components;
  for (const auto& m : matrices) {
    ordered_json p;
    p["model"] = m.model;
    p["benchmark"] = m.benchmark;
    std::vector<std::string> excluded;
    const auto complete = m.complete_rows(&excluded);
    p["n_items"] = complete.n_items();
    p["n_conditions"] = complete.n_conditions();
    p["excluded_items"] = excluded;
    try {
      const auto c = decompose(complete);
      p["v_data"] = c.v_data;
      p["v_brittleness"] = c.v_brittleness;
      p["v_total"] = c.v_total;
      components.push_back(c);
    } catch (const StatsError& e) {
      p["v_data"] = nullptr;
      p["v_brittleness"] = nullptr;
      p["v_total"] = nullptr;
      p["error"] = e.what();
    }
    pairs.push_back(std::move(p));

    const auto acc = accuracy_report(m, grouping_for(m));
    ordered_json a;
    a["model"] = m.model;
    a["benchmark"] = m.benchmark;
    a["baseline"] = accuracy_row_json(acc.baseline);
    auto conds = ordered_json::array();
    for (const auto& r : acc.conditions) conds.push_back(accuracy_row_json(r));
    a["conditions"] = std::move(conds);
    auto groups = ordered_json::array();
    for (const auto& r : acc.groups) groups.push_back(accuracy_row_json(r));
    a["groups"] = std::move(groups);
    a["micro_average"] = accuracy_row_json(acc.micro);
    accuracy.push_back(std::move(a));
  }
  body["components"] = std::move(pairs);
  body["pi_model"] = brittleness_json(brittleness_scores(components, Axis::model));
  body["pi_benchmark"] = brittleness_json(brittleness_scores(components, Axis::benchmark));
  body["accuracy"] = std::move(accuracy);
  return body;
}

std::string accuracy_csv(const std::vector<OutcomeMatrix>& matrices) {
  std::string out = "model,benchmark,row_type,label,cells,accuracy,drop_points\n";
  auto emit = [&](const OutcomeMatrix& m, std::string_view type, const AccuracyRow& r) {
    out += csv_field(m.model) + "," + csv_field(m.benchmark) + "," + std::string(type) + "," + csv_field(r.label) +
           "," + std::to_string(r.cells) + "," + (r.accuracy ? format_real(*r.accuracy) : "") + "," +
           (r.drop ? format_points(*r.drop) : "") + "\n";
  };
  for (const auto& m : matrices) {
    const auto acc = accuracy_report(m, grouping_for(m));
    emit(m, "baseline", acc.baseline);
    for (const auto& r : acc.conditions) emit(m, "condition", r);
    for (const auto& r : acc.groups) emit(m, "group", r);
    emit(m, "micro", acc.micro);
  }
  return out;
}

std::vector<TaskAccuracies> task_accuracies(const std::vector<OutcomeMatrix>& matrices,
                                            std::vector<std::string>* models_out) {
  std::vector<std::string> models;
  std::set<std::string> benchmarks;
  std::map<std::pair<std::string, std::string>, const OutcomeMatrix*> by_key;
  for (const auto& m : matrices) {
    if (std::find(models.begin(), models.end(), m.model) == models.end()) models.push_back(m.model);
    benchmarks.insert(m.benchmark);
    if (!by_key.emplace(std::pair{m.model, m.benchmark}, &m).second) {
      throw StatsError("duplicate outcome matrix for " + m.model + "/" + m.benchmark);
    }
  }
  if (models_out != nullptr) *models_out = models;
  std::vector<TaskAccuracies> tasks;
  for (const auto& bench : benchmarks) {
    std::vector<const OutcomeMatrix*> ms;
    for (const auto& model : models) {
      const auto it = by_key.find({model, bench});
      if (it == by_key.end()) throw StatsError("model " + model + " has no outcomes for " + bench);
      ms.push_back(it->second);
    }
    TaskAccuracies t;
    t.task = bench;
    bool ok = true;
    for (const auto* m : ms) {
      const auto a = m->column_accuracy(0);
      if (!a) ok = false;
      t.baseline.push_back(a.value_or(0.0));
    }
    if (!ok) continue;
    for (std::size_t j = 1; j < ms.front()->n_conditions(); ++j) {
      const auto& label = ms.front()->conditions[j];
      std::vector<double> acc;
      for (const auto* m : ms) {
        const auto it = std::find(m->conditions.begin(), m->conditions.end(), label);
        if (it == m->conditions.end()) break;
        const auto a = m->column_accuracy(static_cast<std::size_t>(it - m->conditions.begin()));
        if (!a) break;
        acc.push_back(*a);
      }
      if (acc.size() == ms.size()) t.perturbed[label] = std::move(acc);
    }
    tasks.push_back(std::move(t));
  }
  return tasks;
}

ordered_json rank_report(const std::vector<OutcomeMatrix>& matrices) {
  std::vector<std::string> models;
  const auto tasks = task_accuracies(matrices, &models);
  if (models.size() < 2) throw StatsError("rank stability needs at least two models");
  const auto rs = rank_stability(tasks);
  ordered_json body;
  body["models"] = models;
  auto task_arr = ordered_json::array();
  for (const auto& t : tasks) {
    ordered_json tj;
    tj["task"] = t.task;
    ordered_json base;
    for (std::size_t i = 0; i < models.size(); ++i) base[models[i]] = t.baseline[i];
    tj["baseline_accuracy"] = std::move(base);
    ordered_json rhos = ordered_json::object();
    if (const auto it = rs.per_task.find(t.task); it != rs.per_task.end()) {
      for (const auto& [pert, rho] : it->second) rhos[pert] = optional_json(rho);
    }
    tj["rho"] = std::move(rhos);
    task_arr.push_back(std::move(tj));
  }
  body["tasks"] = std::move(task_arr);
  auto rows = ordered_json::array();
  for (const auto& r : rs.rows) {
    ordered_json rj;
    rj["perturbation"] = r.perturbation;
    rj["mean_rho"] = optional_json(r.mean_rho);
    rj["tasks"] = r.tasks;
    rj["changed"] = r.changed;
    rj["undefined"] = r.undefined;
    rows.push_back(std::move(rj));
  }
  body["perturbations"] = std::move(rows);
  auto rate = [](std::size_t a, std::size_t b) { return b == 0 ? json(nullptr) : json(static_cast<double>(a) / static_cast<double>(b)); };
  ordered_json changed;
  changed["cases"] = {{"changed", rs.changed_cases}, {"total", rs.total_cases},
                      {"rate", rate(rs.changed_cases, rs.total_cases)}};
  changed["perturbations"] = {{"changed", rs.changed_perturbations},
                              {"total", rs.total_perturbations},
                              {"rate", rate(rs.changed_perturbations, rs.total_perturbations)}};
  body["changed_ranking"] = std::move(changed);
  return body;
}

std::string rank_csv(const ordered_json& report) {
  std::string out = "perturbation,mean_rho,tasks,changed,undefined\n";
  for (const auto& r : report.at("perturbations")) {
    const auto& rho = r.at("mean_rho");
    out += csv_field(r.at("perturbation").get<std::string>()) + "," +
           (rho.is_null() ? std::string() : format_real(rho.get<double>())) + "," +
           std::to_string(r.at("tasks").get<std::size_t>()) + "," + std::to_string(r.at("changed").get<std::size_t>()) +
           "," + std::to_string(r.at("undefined").get<std::size_t>()) + "\n";
  }
  return out;
}

ordered_json agreement_to_json(const AgreementSuite& s) {
  ordered_json j;
  j["n_items"] = s.n_items;
  j["n_raters"] = s.n_raters;
  j["pairwise_weighted_kappa_mean"] = optional_json(s.pairwise_kappa_mean);
  j["krippendorff_alpha_ordinal"] = optional_json(s.alpha);
  j["exact_agreement"] = optional_json(s.exact_agreement);
  j["judged_items"] = s.judged_items;
  j["judge_vs_consensus_kappa"] = optional_json(s.judge_kappa);
  j["judge_vs_consensus_exact"] = optional_json(s.judge_exact);
  j["judge_mae"] = optional_json(s.mae);
  j["judge_spearman"] = optional_json(s.spearman);
  return j;
}

ordered_json similarity_to_json(const SimilarityReport& r) {
  ordered_json j;
  j["provider"] = r.provider;
  j["n_pairs"] = r.n_pairs;
  j["embedded_texts"] = r.embedded_texts;
  j["mean"] = r.n_pairs == 0 ? json(nullptr) : json(r.mean);
  j["min"] = r.n_pairs == 0 ? json(nullptr) : json(r.min);
  ordered_json kinds = ordered_json::object();
  for (const auto& [kind, k] : r.per_kind) kinds[kind] = {{"count", k.count}, {"mean", k.mean}, {"min", k.min}};
  j["per_kind"] = std::move(kinds);
  auto hist = ordered_json::array();
  for (std::size_t b = 0; b < r.histogram.size(); ++b) {
    const double width = 2.0 / static_cast<double>(r.histogram.size());
    hist.push_back({{"lo", -1.0 + width * static_cast<double>(b)},
                    {"hi", -1.0 + width * static_cast<double>(b + 1)},
                    {"count", r.histogram[b]}});
  }
  j["histogram"] = std::move(hist);
  return j;
}

Annotations parse_annotations(std::string_view content) {
  std::vector<std::vector<std::string>> rows;
  for (auto& row : parse_csv(content)) {
    if (!row.empty() && row.front().starts_with("#")) continue;
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(1, "header", "annotation file is empty");
  const auto& head = rows.front();
  if (head.empty() || trim(head.front()) != "item_id") throw FormatError(1, "header", "first column must be item_id");
  Annotations out;
  std::optional<std::size_t> judge_col;
  std::vector<std::size_t> rater_cols;
  for (std::size_t c = 1; c < head.size(); ++c) {
    const auto name = std::string(trim(head[c]));
    if (name == "judge") {
      judge_col = c;
    } else {
      rater_cols.push_back(c);
      out.raters.push_back(name);
    }
  }
  auto parse_cell = [&](const std::string& raw, std::size_t line, const std::string& col) -> std::optional<int> {
    const auto t = trim(raw);
    if (t.empty()) return std::nullopt;
    int v = 0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
      throw FormatError(line, col, "not an integer rating: '" + std::string(t) + "'");
    }
    return v;
  };
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != head.size()) {
      throw FormatError(r + 1, "<row>", "expected " + std::to_string(head.size()) + " columns, got " +
                                            std::to_string(row.size()));
    }
    out.item_ids.push_back(std::string(trim(row[0])));
    std::vector<std::optional<int>> ratings;
    for (std::size_t i = 0; i < rater_cols.size(); ++i) {
      ratings.push_back(parse_cell(row[rater_cols[i]], r + 1, out.raters[i]));
    }
    out.human.push_back(std::move(ratings));
    if (judge_col) out.judge.push_back(parse_cell(row[*judge_col], r + 1, "judge"));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config-driven run

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  RunConfig c;
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
  try {
    for (const auto& b : j.at("benchmarks")) c.benchmarks.push_back(resolve(b.get<std::string>()));
    if (j.contains("template")) c.template_path = resolve(j.at("template").get<std::string>());
    if (j.contains("templates_dir")) c.templates_dir = resolve(j.at("templates_dir").get<std::string>());
    c.k_shot = j.value("k_shot", std::size_t{0});
    c.targeting = targeting_from_string(j.value("targeting", std::string("stem")));
    c.seed = j.value("seed", std::uint64_t{0});
    for (const auto& p : j.value("perturbations", json::array())) {
      std::vector<PerturbationSpec> specs;
      if (p.is_string()) {
        specs.push_back(PerturbationSpec::make(kind_from_string(p.get<std::string>())));
      } else if (p.contains("compose")) {
        for (const auto& s : p.at("compose")) {
          specs.push_back(s.is_string() ? PerturbationSpec::make(kind_from_string(s.get<std::string>()))
                                        : spec_from_json(s));
        }
        if (specs.size() < 2) throw UsageError("a composition needs at least two perturbations");
      } else {
        specs.push_back(spec_from_json(p));
      }
      c.conditions.push_back(std::move(specs));
    }
    c.models = j.at("models").get<std::vector<std::string>>();
    c.mode = eval_mode_from_string(j.value("mode", std::string("letter")));
    c.concurrency = j.value("concurrency", std::size_t{8});
    c.allow_partial = j.value("allow_partial", false);
    c.paraphrase_provider = j.value("paraphrase_provider", std::string("mock-upper"));
    if (j.contains("endpoints")) c.endpoints = j.at("endpoints");
    if (j.contains("cache_dir")) c.cache_dir = resolve(j.at("cache_dir").get<std::string>());
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  if (c.benchmarks.empty()) throw UsageError("config lists no benchmarks");
  if (c.models.empty()) throw UsageError("config lists no models");
  if (c.concurrency == 0) throw UsageError("concurrency must be at least 1");
  return c;
}

ordered_json RunConfig::to_json() const {
  ordered_json j;
  auto names = ordered_json::array();
  for (const auto& b : benchmarks) names.push_back(b.filename().string());
  j["benchmarks"] = std::move(names);
  j["template"] = template_path ? json(template_path->filename().string()) : json("standard");
  j["templates_dir"] = templates_dir ? json(templates_dir->filename().string()) : json("builtin");
  j["k_shot"] = k_shot;
  j["targeting"] = to_string(targeting);
  j["seed"] = seed;
  auto conds = ordered_json::array();
  for (const auto& specs : conditions) {
    auto arr = ordered_json::array();
    for (const auto& s : specs) arr.push_back(spec_to_json(s));
    conds.push_back(std::move(arr));
  }
  j["conditions"] = std::move(conds);
  j["models"] = models;
  j["mode"] = to_string(mode);
  j["allow_partial"] = allow_partial;
  j["paraphrase_provider"] = paraphrase_provider;
  j["endpoints"] = endpoints;
  j["stopwords"] = kStopwordsVersion;
  return j;
}

RunOutputs run_pipeline(const RunConfig& config, const fs::path& out_dir, TraceSink trace) {
  RunOutputs out;
  const auto templates = config.templates_dir ? TemplateLibrary::load_dir(*config.templates_dir) : TemplateLibrary();
  const auto tmpl = config.template_path ? PromptTemplate::from_file(*config.template_path) : PromptTemplate::standard();

  json registry_config;
  registry_config["endpoints"] = config.endpoints;
  auto registry = EndpointRegistry::from_config(registry_config);
  registry.trace = std::move(trace);
  std::unique_ptr<ParaphraseCache> pcache;
  if (config.cache_dir) {
    registry.cache = std::make_shared<ResponseCache>(*config.cache_dir);
    pcache = std::make_unique<ParaphraseCache>(*config.cache_dir / "paraphrase");
  } else {
    pcache = std::make_unique<ParaphraseCache>();
  }
  const auto paraphraser = registry.paraphraser(config.paraphrase_provider, templates);
  PerturbContext ctx;
  ctx.allow_partial = config.allow_partial;
  ctx.templates = &templates;
  ctx.provider = paraphraser.get();
  ctx.cache = pcache.get();

  const auto cfg = config.to_json();
  ordered_json seeds;
  seeds["seed"] = config.seed;
  std::vector<InputRef> inputs;
  std::vector<PromptRecord> records;
  for (const auto& b : config.benchmarks) {
    const auto content = read_file(b);
    inputs.push_back(input_ref(b.filename().string(), content));
    auto recs = parse_benchmark(content);
    records.insert(records.end(), recs.begin(), recs.end());
  }
  if (config.template_path) inputs.push_back(input_ref(*config.template_path));

  auto write = [&](const fs::path& rel, const std::string& content) {
    write_file_atomic(out_dir / rel, content);
    out.written.push_back(out_dir / rel);
  };

  auto prompts = baseline_prompts(records, config.k_shot, tmpl);
  for (const auto& specs : config.conditions) {
    PerturbSettings settings;
    settings.specs = specs;
    settings.seed = config.seed;
    settings.targeting = config.targeting;
    settings.k_shot = config.k_shot;
    settings.allow_partial = config.allow_partial;
    const auto perturbed = perturb_dataset(records, settings, tmpl, ctx, config.concurrency);
    const auto label = condition_label(specs);
    write(fs::path("perturbed") / (label + ".jsonl"),
          serialize_perturbed(make_header("run/perturb", cfg, seeds, inputs), perturbed));
    auto more = perturbed_prompts(perturbed);
    prompts.insert(prompts.end(), more.begin(), more.end());
  }

  std::vector<std::shared_ptr<ModelClient>> clients;
  for (const auto& m : config.models) clients.push_back(registry.client(m));
  const auto result = evaluate(prompts, clients, config.mode, config.concurrency);

  auto eval_header = make_header("run/eval", cfg, seeds, inputs);
  eval_header["header"]["diagnostics"] = diagnostics_to_json(result.diagnostics);
  write("outcomes.jsonl", serialize_outcomes(eval_header, result.matrices));
  write("outcomes.csv", csv_comment_header(eval_header) + outcomes_long_csv(result.matrices));

  const auto dec_header = make_header("run/decompose", cfg, seeds, inputs);
  write("decomposition.json", json_document(dec_header, decomposition_report(result.matrices)));
  write("accuracy.csv", csv_comment_header(dec_header) + accuracy_csv(result.matrices));

  if (clients.size() >= 2) {
    const auto rank_header = make_header("run/rank", cfg, seeds, inputs);
    const auto report = rank_report(result.matrices);
    write("rank.json", json_document(rank_header, report));
    write("rank.csv", csv_comment_header(rank_header) + rank_csv(report));
  }
  return out;
}

}  // namespace robustmc
