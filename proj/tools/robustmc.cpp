#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "robustmc/errors.hpp"
#include "robustmc/io.hpp"
#include "robustmc/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;
using namespace robustmc;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool trace = false;
  std::string cache_dir;
  std::size_t concurrency = 8;
  std::string config_path;
};

std::mutex trace_mu;

void trace_to_stderr(std::string_view what, std::string_view body) {
  std::lock_guard lock(trace_mu);
  std::cerr << "[trace] " << what << "\n" << body << "\n";
}

json load_config(const Globals& g) {
  if (g.config_path.empty()) return json::object();
  try {
    return json::parse(read_file(g.config_path));
  } catch (const json::parse_error& e) {
    throw UsageError("config " + g.config_path + " is not valid JSON: " + e.what());
  }
}

fs::path config_dir(const Globals& g) {
  return g.config_path.empty() ? fs::current_path() : fs::path(g.config_path).parent_path();
}

EndpointRegistry make_registry(const Globals& g, const json& config) {
  auto reg = EndpointRegistry::from_config(config);
  if (g.trace) reg.trace = trace_to_stderr;
  std::string cache = g.cache_dir;
  if (cache.empty() && config.contains("cache_dir")) {
    cache = (config_dir(g) / config.at("cache_dir").get<std::string>()).string();
  }
  if (!cache.empty()) reg.cache = std::make_shared<ResponseCache>(cache);
  return reg;
}

ordered_json seeds_of(const Globals& g) {
  ordered_json s;
  s["seed"] = g.seed;
  return s;
}

std::map<std::string, std::string> parse_params(const std::vector<std::string>& raw) {
  std::map<std::string, std::string> out;
  for (const auto& p : raw) {
    const auto eq = p.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--param expects key=value, got '" + p + "'");
    out[p.substr(0, eq)] = p.substr(eq + 1);
  }
  return out;
}

std::string basename(const std::string& p) { return fs::path(p).filename().string(); }

// Options shared by commands that build prompts.
struct PromptOptions {
  std::size_t k_shot = 0;
  std::string targeting = "stem";
  std::string template_path;
  std::string templates_dir;
  std::string paraphrase_provider = "mock-upper";
  bool allow_partial = false;

  void add_to(CLI::App* cmd, bool perturbs) {
    cmd->add_option("--k-shot", k_shot, "Few-shot exemplars taken from each item's pool");
    cmd->add_option("--template", template_path, "Prompt template file");
    if (!perturbs) return;
    cmd->add_option("--targeting", targeting, "stem or stem+exemplars");
    cmd->add_option("--templates-dir", templates_dir, "Persona/emotion/paraphrase template directory");
    cmd->add_option("--paraphrase-provider", paraphrase_provider, "mock-upper or a configured endpoint id");
    cmd->add_flag("--allow-partial", allow_partial, "Apply fewer edits when sites run out");
  }

  PromptTemplate prompt_template() const {
    return template_path.empty() ? PromptTemplate::standard() : PromptTemplate::from_file(template_path);
  }

  TemplateLibrary library() const {
    return templates_dir.empty() ? TemplateLibrary() : TemplateLibrary::load_dir(templates_dir);
  }

  ordered_json to_json() const {
    ordered_json j;
    j["k_shot"] = k_shot;
    j["template"] = template_path.empty() ? "standard" : basename(template_path);
    j["targeting"] = targeting;
    j["templates_dir"] = templates_dir.empty() ? "builtin" : basename(templates_dir);
    j["paraphrase_provider"] = paraphrase_provider;
    j["allow_partial"] = allow_partial;
    j["stopwords"] = kStopwordsVersion;
    return j;
  }
};

// Everything a perturbing command needs alive while it runs.
struct PerturbRuntime {
  TemplateLibrary templates;
  std::unique_ptr<ParaphraseProvider> provider;
  std::unique_ptr<ParaphraseCache> cache;
  PerturbContext ctx;

  PerturbRuntime(const PromptOptions& opts, const EndpointRegistry& reg, const Globals& g)
      : templates(opts.library()) {
    provider = reg.paraphraser(opts.paraphrase_provider, templates);
    cache = g.cache_dir.empty() ? std::make_unique<ParaphraseCache>()
                                : std::make_unique<ParaphraseCache>(fs::path(g.cache_dir) / "paraphrase");
    ctx.allow_partial = opts.allow_partial;
    ctx.templates = &templates;
    ctx.provider = provider.get();
    ctx.cache = cache.get();
  }
};

std::vector<InputRef> refs_of(const std::vector<std::string>& paths) {
  std::vector<InputRef> out;
  for (const auto& p : paths) out.push_back(input_ref(p));
  return out;
}

std::vector<PerturbedRecord> perturb_with(const std::vector<PromptRecord>& records,
                                          const std::vector<PerturbationSpec>& specs, const PromptOptions& opts,
                                          const PerturbRuntime& rt, const Globals& g) {
  PerturbSettings s;
  s.specs = specs;
  s.seed = g.seed;
  s.targeting = targeting_from_string(opts.targeting);
  s.k_shot = opts.k_shot;
  s.allow_partial = opts.allow_partial;
  return perturb_dataset(records, s, opts.prompt_template(), rt.ctx, g.concurrency);
}

std::vector<std::shared_ptr<ModelClient>> clients_for(const EndpointRegistry& reg,
                                                      const std::vector<std::string>& specs) {
  std::vector<std::shared_ptr<ModelClient>> out;
  for (const auto& s : specs) out.push_back(reg.client(s));
  return out;
}

void print_error(const std::string& kind, const std::string& message) {
  json e;
  e["error"] = {{"kind", kind}, {"message", message}};
  std::cerr << e.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perturbation robustness evaluation for multiple-choice benchmarks"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Master seed");
  app.add_flag("--trace", g.trace, "Log request and response payloads to stderr");
  app.add_option("--cache-dir", g.cache_dir, "Response cache directory");
  app.add_option("--concurrency", g.concurrency, "Maximum in-flight requests")->check(CLI::PositiveNumber);
  app.add_option("--config", g.config_path, "JSON config (endpoints and run settings)");
  app.set_version_flag("--version", std::string(kToolVersion));

  // perturb ------------------------------------------------------------------
  auto* perturb = app.add_subcommand("perturb", "Write a perturbed copy of a benchmark");
  std::string p_input, p_out;
  std::vector<std::string> p_kinds, p_params;
  std::size_t p_intensity = 0;
  PromptOptions p_opts;
  perturb->add_option("--input", p_input, "Benchmark file")->required();
  perturb->add_option("--kind", p_kinds, "Perturbation kind; repeat to compose in order")->required();
  perturb->add_option("--intensity", p_intensity, "Occurrences or padding width (default per kind)");
  perturb->add_option("--param", p_params, "Extra key=value parameter");
  perturb->add_option("--out", p_out, "Output file")->required();
  p_opts.add_to(perturb, true);

  // eval ---------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Score baseline and perturbed prompts");
  std::string e_bench, e_out, e_csv, e_mode = "letter";
  std::vector<std::string> e_datasets, e_endpoints;
  PromptOptions e_opts;
  eval->add_option("--benchmark", e_bench, "Unperturbed benchmark file (baseline condition)")->required();
  eval->add_option("--dataset", e_datasets, "Perturbed dataset file");
  eval->add_option("--endpoint", e_endpoints, "mock:brittle:SEED, mock:robust:SEED or a configured id")->required();
  eval->add_option("--mode", e_mode, "letter or logprob");
  eval->add_option("--out", e_out, "Outcome file")->required();
  eval->add_option("--csv", e_csv, "Long-form CSV output");
  e_opts.add_to(eval, false);

  // decompose ----------------------------------------------------------------
  auto* decomp = app.add_subcommand("decompose", "Variance components, brittleness scores and drops");
  std::vector<std::string> d_outcomes;
  std::string d_out, d_csv;
  decomp->add_option("--outcomes", d_outcomes, "Outcome file")->required();
  decomp->add_option("--out", d_out, "Report JSON")->required();
  decomp->add_option("--csv", d_csv, "Accuracy/drop CSV");

  // rank ---------------------------------------------------------------------
  auto* rank = app.add_subcommand("rank", "Rank stability across models");
  std::vector<std::string> r_outcomes;
  std::string r_out, r_csv;
  rank->add_option("--outcomes", r_outcomes, "Outcome file")->required();
  rank->add_option("--out", r_out, "Report JSON")->required();
  rank->add_option("--csv", r_csv, "Per-perturbation CSV");

  // sweep --------------------------------------------------------------------
  auto* sweep_cmd = app.add_subcommand("sweep", "Accuracy drop as intensity grows");
  std::string s_input, s_kind, s_out, s_mode = "letter";
  std::size_t s_max = 5;
  std::vector<std::string> s_endpoints, s_params;
  PromptOptions s_opts;
  sweep_cmd->add_option("--input", s_input, "Benchmark file")->required();
  sweep_cmd->add_option("--kind", s_kind, "Perturbation kind")->required();
  sweep_cmd->add_option("--max-intensity", s_max, "Largest intensity")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--endpoint", s_endpoints, "Model endpoint")->required();
  sweep_cmd->add_option("--mode", s_mode, "letter or logprob");
  sweep_cmd->add_option("--param", s_params, "Extra key=value parameter");
  sweep_cmd->add_option("--out", s_out, "CSV output")->required();
  s_opts.add_to(sweep_cmd, true);

  // compose ------------------------------------------------------------------
  auto* compose_cmd = app.add_subcommand("compose", "Pairwise composition drop heatmap");
  std::string c_input, c_endpoint, c_out, c_mode = "letter";
  std::vector<std::string> c_first, c_second;
  PromptOptions c_opts;
  compose_cmd->add_option("--input", c_input, "Benchmark file")->required();
  compose_cmd->add_option("--first", c_first, "Kinds applied first (rows)")->required();
  compose_cmd->add_option("--second", c_second, "Kinds applied second (columns)")->required();
  compose_cmd->add_option("--endpoint", c_endpoint, "Model endpoint")->required();
  compose_cmd->add_option("--mode", c_mode, "letter or logprob");
  compose_cmd->add_option("--out", c_out, "CSV output")->required();
  c_opts.add_to(compose_cmd, true);

  // agree --------------------------------------------------------------------
  auto* agree = app.add_subcommand("agree", "Inter-annotator and judge agreement");
  std::string a_file, a_out;
  int a_scale = 5;
  agree->add_option("--annotations", a_file, "CSV: item_id, rater columns, optional judge")->required();
  agree->add_option("--scale", a_scale, "Ratings run 1..scale")->check(CLI::Range(2, 1000));
  agree->add_option("--out", a_out, "Report JSON")->required();

  // similarity ---------------------------------------------------------------
  auto* sim = app.add_subcommand("similarity", "Embedding cosine between original and perturbed prompts");
  std::string m_bench, m_provider = "offline-hash", m_out, m_csv;
  std::vector<std::string> m_datasets;
  std::size_t m_dim = 1024;
  PromptOptions m_opts;
  sim->add_option("--benchmark", m_bench, "Unperturbed benchmark file")->required();
  sim->add_option("--dataset", m_datasets, "Perturbed dataset file")->required();
  sim->add_option("--provider", m_provider, "offline-hash or a configured endpoint id");
  sim->add_option("--dimension", m_dim, "offline-hash dimension")->check(CLI::PositiveNumber);
  sim->add_option("--out", m_out, "Report JSON")->required();
  sim->add_option("--csv", m_csv, "Per-pair CSV");
  m_opts.add_to(sim, false);

  // run ----------------------------------------------------------------------
  auto* run = app.add_subcommand("run", "Config-driven perturb, eval, decompose and rank");
  std::string u_out_dir;
  run->add_option("--out-dir", u_out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage_error", e.what());
    return 2;
  }

  try {
    const auto config = load_config(g);
    const auto seeds = seeds_of(g);

    if (*perturb) {
      const auto reg = make_registry(g, config);
      PerturbRuntime rt(p_opts, reg, g);
      const auto params = parse_params(p_params);
      std::vector<PerturbationSpec> specs;
      for (const auto& k : p_kinds) {
        auto spec = PerturbationSpec::make(kind_from_string(k));
        if (p_intensity > 0) spec.intensity = p_intensity;
        spec.params = params;
        specs.push_back(spec);
      }
      ordered_json cfg = p_opts.to_json();
      auto arr = ordered_json::array();
      for (const auto& s : specs) arr.push_back(spec_to_json(s));
      cfg["perturbation"] = std::move(arr);
      const auto records = load_benchmark(p_input);
      const auto out = perturb_with(records, specs, p_opts, rt, g);
      write_file_atomic(p_out, serialize_perturbed(make_header("perturb", cfg, seeds, refs_of({p_input})), out));
      std::size_t skipped = 0;
      for (const auto& r : out) skipped += r.skipped.has_value();
      std::cerr << "perturbed " << out.size() - skipped << " of " << out.size() << " records\n";
      return 0;
    }

    if (*eval) {
      const auto mode = eval_mode_from_string(e_mode);
      const auto reg = make_registry(g, config);
      const auto records = load_benchmark(e_bench);
      auto prompts = baseline_prompts(records, e_opts.k_shot, e_opts.prompt_template());
      for (const auto& d : e_datasets) {
        const auto perturbed = parse_perturbed(read_file(d));
        for (const auto& r : perturbed) {
          if (r.k_shot != e_opts.k_shot) {
            throw UsageError(d + ": item " + r.record.id + " was built with k_shot " + std::to_string(r.k_shot) +
                             ", evaluating with " + std::to_string(e_opts.k_shot));
          }
        }
        auto more = perturbed_prompts(perturbed);
        prompts.insert(prompts.end(), more.begin(), more.end());
      }
      const auto result = evaluate(prompts, clients_for(reg, e_endpoints), mode, g.concurrency);
      ordered_json cfg = e_opts.to_json();
      cfg["endpoints"] = e_endpoints;
      cfg["mode"] = to_string(mode);
      cfg["endpoint_config"] = config.value("endpoints", json::array());
      std::vector<std::string> inputs{e_bench};
      inputs.insert(inputs.end(), e_datasets.begin(), e_datasets.end());
      auto header = make_header("eval", cfg, seeds, refs_of(inputs));
      header["header"]["diagnostics"] = diagnostics_to_json(result.diagnostics);
      write_file_atomic(e_out, serialize_outcomes(header, result.matrices));
      if (!e_csv.empty()) write_file_atomic(e_csv, csv_comment_header(header) + outcomes_long_csv(result.matrices));
      for (const auto& w : result.diagnostics.warnings) std::cerr << "warning: " << w << "\n";
      return 0;
    }

    if (*decomp || *rank) {
      const auto& files = *decomp ? d_outcomes : r_outcomes;
      std::vector<OutcomeMatrix> matrices;
      for (const auto& f : files) {
        auto ms = parse_outcomes(read_file(f));
        matrices.insert(matrices.end(), ms.begin(), ms.end());
      }
      ordered_json cfg;
      cfg["outcomes"] = files.size();
      if (*decomp) {
        const auto header = make_header("decompose", cfg, seeds, refs_of(files));
        write_file_atomic(d_out, json_document(header, decomposition_report(matrices)));
        if (!d_csv.empty()) write_file_atomic(d_csv, csv_comment_header(header) + accuracy_csv(matrices));
      } else {
        const auto header = make_header("rank", cfg, seeds, refs_of(files));
        const auto report = rank_report(matrices);
        write_file_atomic(r_out, json_document(header, report));
        if (!r_csv.empty()) write_file_atomic(r_csv, csv_comment_header(header) + rank_csv(report));
      }
      return 0;
    }

    if (*sweep_cmd) {
      const auto mode = eval_mode_from_string(s_mode);
      const auto reg = make_registry(g, config);
      PerturbRuntime rt(s_opts, reg, g);
      const auto kind = kind_from_string(s_kind);
      const auto params = parse_params(s_params);
      const auto records = load_benchmark(s_input);
      auto prompts = baseline_prompts(records, s_opts.k_shot, s_opts.prompt_template());
      for (std::size_t n = 1; n <= s_max; ++n) {
        auto spec = PerturbationSpec::make(kind);
        spec.intensity = n;
        spec.params = params;
        auto more = perturbed_prompts(perturb_with(records, {spec}, s_opts, rt, g));
        prompts.insert(prompts.end(), more.begin(), more.end());
      }
      const auto result = evaluate(prompts, clients_for(reg, s_endpoints), mode, g.concurrency);
      ordered_json cfg = s_opts.to_json();
      cfg["kind"] = s_kind;
      cfg["max_intensity"] = s_max;
      cfg["params"] = params;
      cfg["endpoints"] = s_endpoints;
      cfg["mode"] = to_string(mode);
      std::string csv = "model,benchmark,kind,intensity,items,skipped,accuracy,drop_points\n";
      for (const auto& m : result.matrices) {
        for (std::size_t j = 1; j < m.n_conditions(); ++j) {
          const auto d = paired_drop(m, j);
          const auto at = m.conditions[j].find('@');
          const auto intensity = at == std::string::npos ? std::string("1") : m.conditions[j].substr(at + 1);
          csv += csv_field(m.model) + "," + csv_field(m.benchmark) + "," + s_kind + "," + intensity + "," +
                 std::to_string(d.items) + "," + std::to_string(m.n_items() - m.column_available(j)) + "," +
                 (d.accuracy ? format_real(*d.accuracy) : "") + "," + (d.drop ? format_points(*d.drop) : "") + "\n";
        }
      }
      const auto header = make_header("sweep", cfg, seeds, refs_of({s_input}));
      write_file_atomic(s_out, csv_comment_header(header) + csv);
      return 0;
    }

    if (*compose_cmd) {
      const auto mode = eval_mode_from_string(c_mode);
      const auto reg = make_registry(g, config);
      PerturbRuntime rt(c_opts, reg, g);
      const auto records = load_benchmark(c_input);
      auto prompts = baseline_prompts(records, c_opts.k_shot, c_opts.prompt_template());
      std::map<std::pair<std::string, std::string>, std::string> label_of;
      std::set<std::string> done;
      for (const auto& a : c_first) {
        for (const auto& b : c_second) {
          std::vector<PerturbationSpec> specs{PerturbationSpec::make(kind_from_string(a))};
          if (a != b) specs.push_back(PerturbationSpec::make(kind_from_string(b)));
          const auto label = condition_label(specs);
          label_of[{a, b}] = label;
          if (!done.insert(label).second) continue;
          auto more = perturbed_prompts(perturb_with(records, specs, c_opts, rt, g));
          prompts.insert(prompts.end(), more.begin(), more.end());
        }
      }
      const auto result = evaluate(prompts, clients_for(reg, {c_endpoint}), mode, g.concurrency);
      std::string csv = "first\\second";
      for (const auto& b : c_second) csv += "," + b;
      csv += "\n";
      for (const auto& a : c_first) {
        csv += a;
        for (const auto& b : c_second) {
          long items = 0;
          double sum = 0.0;
          for (const auto& m : result.matrices) {
            const auto d = paired_drop(m, m.condition_index(label_of.at({a, b})));
            if (!d.drop) continue;
            sum += *d.drop * static_cast<double>(d.items);
            items += static_cast<long>(d.items);
          }
          csv += ",";
          if (items > 0) csv += format_points(sum / static_cast<double>(items));
        }
        csv += "\n";
      }
      ordered_json cfg = c_opts.to_json();
      cfg["first"] = c_first;
      cfg["second"] = c_second;
      cfg["endpoint"] = c_endpoint;
      cfg["mode"] = to_string(mode);
      const auto header = make_header("compose", cfg, seeds, refs_of({c_input}));
      write_file_atomic(c_out, csv_comment_header(header) + csv);
      return 0;
    }

    if (*agree) {
      const auto ann = parse_annotations(read_file(a_file));
      const auto suite = agreement_suite(ann.human, ann.judge, a_scale);
      ordered_json cfg;
      cfg["scale"] = a_scale;
      cfg["raters"] = ann.raters;
      cfg["judge_column"] = !ann.judge.empty();
      const auto header = make_header("agree", cfg, seeds, refs_of({a_file}));
      write_file_atomic(a_out, json_document(header, agreement_to_json(suite)));
      return 0;
    }

    if (*sim) {
      const auto records = load_benchmark(m_bench);
      const auto tmpl = m_opts.prompt_template();
      std::map<std::string, const PromptRecord*> by_id;
      for (const auto& r : records) by_id[r.benchmark + "\n" + r.id] = &r;
      std::vector<SimilarityPair> pairs;
      std::vector<std::string> pair_ids;
      for (const auto& d : m_datasets) {
        for (const auto& r : parse_perturbed(read_file(d))) {
          if (r.skipped) continue;
          const auto it = by_id.find(r.record.benchmark + "\n" + r.record.id);
          if (it == by_id.end()) throw UsageError(d + ": item " + r.record.id + " is not in " + m_bench);
          const auto original = assemble_prompt(*it->second, r.k_shot, it->second->fewshot_pool, tmpl).text;
          pairs.push_back({r.condition, original, r.text});
          pair_ids.push_back(r.record.id);
        }
      }
      std::unique_ptr<EmbeddingProvider> provider;
      if (m_provider == "offline-hash") {
        provider = std::make_unique<HashEmbedder>(m_dim);
      } else {
        const auto reg = make_registry(g, config);
        const auto it = reg.endpoints.find(m_provider);
        if (it == reg.endpoints.end()) throw UsageError("unknown embedding provider '" + m_provider + "'");
        provider = std::make_unique<HttpEmbedder>(it->second.base_url, it->second.model, it->second.auth_env,
                                                  reg.retry, reg.trace);
      }
      const auto report = similarity_report(pairs, *provider, g.concurrency);
      ordered_json cfg = m_opts.to_json();
      cfg["provider"] = m_provider;
      if (m_provider == "offline-hash") cfg["dimension"] = m_dim;
      std::vector<std::string> inputs{m_bench};
      inputs.insert(inputs.end(), m_datasets.begin(), m_datasets.end());
      const auto header = make_header("similarity", cfg, seeds, refs_of(inputs));
      write_file_atomic(m_out, json_document(header, similarity_to_json(report)));
      if (!m_csv.empty()) {
        std::string csv = "item_id,kind,cosine\n";
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          csv += csv_field(pair_ids[i]) + "," + csv_field(pairs[i].kind) + "," + format_real(report.scores[i]) + "\n";
        }
        write_file_atomic(m_csv, csv_comment_header(header) + csv);
      }
      return 0;
    }

    if (*run) {
      if (g.config_path.empty()) throw UsageError("run needs --config");
      auto cfg = config;
      // Flags given on the command line win over the config file.
      if (app.count("--seed") > 0) cfg["seed"] = g.seed;
      if (app.count("--concurrency") > 0) cfg["concurrency"] = g.concurrency;
      if (!g.cache_dir.empty()) cfg["cache_dir"] = fs::absolute(g.cache_dir).string();
      const auto rc = RunConfig::from_json(cfg, config_dir(g));
      const auto out = run_pipeline(rc, u_out_dir, g.trace ? TraceSink(trace_to_stderr) : TraceSink());
      for (const auto& p : out.written) std::cout << p.string() << "\n";
      return 0;
    }
  } catch (const UsageError& e) {
    print_error(e.kind(), e.what());
    return 2;
  } catch (const Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("runtime_error", e.what());
    return 1;
  }
  return 0;
}
