#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "robustmc/errors.hpp"
#include "robustmc/io.hpp"
#include "robustmc/pipeline.hpp"
#include "support.hpp"

using namespace robustmc;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const fs::path& stderr_file = "/dev/null") {
  const auto cmd = testsupport::cli_path().string() + " " + args + " >/dev/null 2>" + stderr_file.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string toy() { return (testsupport::assets_dir() / "toy_benchmark.jsonl").string(); }

std::string three_items() {
  std::string out;
  for (int i = 0; i < 3; ++i) {
    nlohmann::json j;
    j["id"] = "q" + std::to_string(i);
    j["benchmark"] = "mini";
    j["stem"] = "Which value is largest number " + std::to_string(i) + "?";
    j["options"] = {"one", "two", "three"};
    j["gold"] = 2;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace

TEST(Csv, QuotingRoundTrip) {
  const std::string row = csv_field("plain") + "," + csv_field("has,comma") + "," + csv_field("q\"uote") + "," +
                          csv_field("multi\nline") + "\n";
  const auto parsed = parse_csv(row + "a,b\n");
  ASSERT_EQ(parsed.size(), 2u);
  EXPECT_EQ(parsed[0], (std::vector<std::string>{"plain", "has,comma", "q\"uote", "multi\nline"}));
  EXPECT_EQ(parsed[1], (std::vector<std::string>{"a", "b"}));
}

TEST(Csv, RealFormattingIsShortestRoundTrip) {
  EXPECT_EQ(format_real(0.25), "0.25");
  EXPECT_EQ(std::stod(format_real(0.1 + 0.2)), 0.1 + 0.2);
}

TEST(Annotations, ParsesRatersAndJudge) {
  const auto a = parse_annotations("# comment\nitem_id,r1,r2,judge\nx,1,2,2\ny,3,,4\n");
  EXPECT_EQ(a.raters, (std::vector<std::string>{"r1", "r2"}));
  ASSERT_EQ(a.human.size(), 2u);
  EXPECT_FALSE(a.human[1][1].has_value());
  EXPECT_EQ(a.judge[1], 4);
  EXPECT_THROW(parse_annotations("id,r1\nx,1\n"), Error);
}

TEST(Perturbed, RecordRoundTrip) {
  const auto records = parse_benchmark(three_items());
  PerturbSettings settings;
  settings.specs = {PerturbationSpec::make(PerturbationKind::typos), PerturbationSpec::make(PerturbationKind::pad_quotes)};
  settings.seed = 5;
  const auto out = perturb_dataset(records, settings, PromptTemplate::standard(), {}, 1);
  const auto text = serialize_perturbed(make_header("test", nlohmann::ordered_json::object(), {}, {}), out);
  const auto back = parse_perturbed(text);
  ASSERT_EQ(back.size(), out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(back[i].text, out[i].text);
    EXPECT_EQ(back[i].edits, out[i].edits);
    EXPECT_EQ(back[i].protected_spans, out[i].protected_spans);
    EXPECT_EQ(back[i].specs, out[i].specs);
    EXPECT_EQ(back[i].condition, "typos@1+pad_quotes@3");
  }
}

TEST(Perturbed, ItemSeedIgnoresFileOrder) {
  auto records = parse_benchmark(three_items());
  PerturbSettings settings;
  settings.specs = {PerturbationSpec::make(PerturbationKind::typos)};
  settings.seed = 9;
  const auto a = perturb_dataset(records, settings, PromptTemplate::standard(), {}, 1);
  std::reverse(records.begin(), records.end());
  const auto b = perturb_dataset(records, settings, PromptTemplate::standard(), {}, 2);
  EXPECT_EQ(a[0].text, b[2].text);
  EXPECT_EQ(a[2].text, b[0].text);
}

TEST(Perturbed, InsufficientItemIsSkippedNotDropped) {
  auto records = parse_benchmark(three_items());
  PerturbSettings settings;
  auto spec = PerturbationSpec::make(PerturbationKind::word_merge);
  spec.intensity = 5;
  settings.specs = {spec};
  const auto out = perturb_dataset(records, settings, PromptTemplate::standard(), {}, 1);
  for (const auto& r : out) {
    ASSERT_TRUE(r.skipped.has_value());
    EXPECT_NE(r.skipped->find("insufficient_sites"), std::string::npos);
  }
}

TEST(Groups, ConditionLabels) {
  EXPECT_EQ(condition_group("typos@2"), "word_manipulation");
  EXPECT_EQ(condition_group("pad_quotes@3"), "prompt_padding");
  EXPECT_EQ(condition_group("persona"), "context_augmentation");
  EXPECT_EQ(condition_group("typos@1+persona"), "composition");
  EXPECT_FALSE(condition_group("baseline").has_value());
}

TEST(Registry, MockSpecsAndReservedIds) {
  const auto reg = EndpointRegistry::from_config(nlohmann::json::object());
  EXPECT_EQ(reg.backend("mock:brittle:7")->endpoint().id, "mock-brittle-7");
  EXPECT_EQ(reg.backend("mock:robust:7")->endpoint().id, "mock-robust-7");
  EXPECT_THROW(reg.backend("unknown-endpoint"), UsageError);
  nlohmann::json cfg;
  cfg["endpoints"] = {{{"id", "mock-x"}, {"base_url", "http://localhost:1"}}};
  EXPECT_THROW(EndpointRegistry::from_config(cfg), UsageError);
}

TEST(Pipeline, RunIsByteIdenticalAcrossDirectories) {
  const auto cfg_path = testsupport::assets_dir() / "examples" / "toy_run.json";
  auto config = RunConfig::from_json(nlohmann::json::parse(read_file(cfg_path)), cfg_path.parent_path());
  const auto a = testsupport::fresh_dir("pipeline_a");
  const auto b = testsupport::fresh_dir("pipeline_b");
  const auto wa = run_pipeline(config, a).written;
  config.concurrency = 1;
  const auto wb = run_pipeline(config, b).written;
  ASSERT_EQ(wa.size(), wb.size());
  for (std::size_t i = 0; i < wa.size(); ++i) {
    EXPECT_EQ(testsupport::slurp(wa[i]), testsupport::slurp(wb[i])) << wa[i];
  }
}

TEST(Pipeline, CachedRerunMakesNoUpstreamCalls) {
  const auto dir = testsupport::fresh_dir("pipeline_cache");
  auto records = parse_benchmark(three_items());
  const auto prompts = baseline_prompts(records, 0, PromptTemplate::standard());
  auto cache = std::make_shared<ResponseCache>(dir);
  auto first = std::make_shared<ModelClient>(mock_model(2), cache);
  const auto r1 = evaluate(prompts, {first}, EvalMode::logprob, 2);
  EXPECT_EQ(first->upstream_calls(), 9u);
  auto second = std::make_shared<ModelClient>(mock_model(2), std::make_shared<ResponseCache>(dir));
  const auto r2 = evaluate(prompts, {second}, EvalMode::logprob, 2);
  EXPECT_EQ(second->upstream_calls(), 0u);
  EXPECT_EQ(r1.matrices, r2.matrices);
}

TEST(Pipeline, PairedDropAndRankReport) {
  OutcomeMatrix m("m", "b", {"i0", "i1", "i2", "i3"}, {"baseline", "typos@1"});
  const int y[4][2] = {{1, 0}, {1, 1}, {0, 1}, {1, 0}};
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 2; ++j) m.set(i, j, static_cast<std::int8_t>(y[i][j]));
  }
  const auto d = paired_drop(m, 1);
  EXPECT_DOUBLE_EQ(d.drop.value(), 0.25);
  EXPECT_EQ(d.items, 4u);
  EXPECT_THROW(rank_report({m}), StatsError);
}

TEST(Similarity, CosineBasics) {
  const std::vector<double> u{1, 2, 3};
  EXPECT_NEAR(cosine(u, u), 1.0, 1e-15);
  const std::vector<double> x{1, 0};
  const std::vector<double> y{0, 1};
  EXPECT_EQ(cosine(x, y), 0.0);
  const std::vector<double> z{0, 0};
  EXPECT_THROW(cosine(x, z), StatsError);
  EXPECT_THROW(cosine(x, u), StatsError);
}

TEST(Similarity, CosineSymmetricBoundedScaleInvariant) {
  testsupport::TextGen gen(83);
  std::normal_distribution<double> n01;
  for (int round = 0; round < 200; ++round) {
    const auto d = gen.uniform(1, 20);
    std::vector<double> a(d);
    std::vector<double> b(d);
    for (auto& v : a) v = n01(gen.engine());
    for (auto& v : b) v = n01(gen.engine());
    const auto c = cosine(a, b);
    EXPECT_LE(std::abs(c), 1.0);
    EXPECT_NEAR(cosine(b, a), c, 1e-15);
    auto scaled = a;
    for (auto& v : scaled) v *= 4.5;
    EXPECT_NEAR(cosine(scaled, b), c, 1e-12);
  }
}

TEST(Similarity, IdenticalPairsAndPaddingStayClose) {
  HashEmbedder emb;
  testsupport::TextGen gen(89);
  std::vector<SimilarityPair> same;
  std::vector<SimilarityPair> padded;
  for (int i = 0; i < 50; ++i) {
    const auto t = gen.text(20, 60);
    same.push_back({"identity", t, t});
    padded.push_back({"pad_spaces", t, pad_prompt(t, PadKind::spaces, 3).text});
    padded.push_back({"pad_newlines", t, pad_prompt(t, PadKind::newlines, 3).text});
    padded.push_back({"pad_quotes", t, pad_prompt(t, PadKind::quotes, 3).text});
  }
  const auto r1 = similarity_report(same, emb, 2);
  EXPECT_NEAR(r1.mean, 1.0, 1e-12);
  EXPECT_EQ(r1.histogram.back(), 50u);
  const auto r2 = similarity_report(padded, emb, 2);
  EXPECT_GT(r2.mean, 0.99);
  EXPECT_EQ(r2.per_kind.size(), 3u);
  EXPECT_EQ(r2.per_kind.at("pad_quotes").count, 50u);
  std::size_t total = 0;
  for (auto h : r2.histogram) total += h;
  EXPECT_EQ(total, r2.n_pairs);
}

TEST(Cli, PerturbPadQuotesWrapsEveryRecord) {
  const auto dir = testsupport::fresh_dir("cli_perturb");
  write_file_atomic(dir / "mini.jsonl", three_items());
  ASSERT_EQ(run_cli("perturb --input " + (dir / "mini.jsonl").string() + " --kind pad_quotes --intensity 1 --out " +
                    (dir / "out.jsonl").string()),
            0);
  const auto recs = parse_perturbed(read_file(dir / "out.jsonl"));
  ASSERT_EQ(recs.size(), 3u);
  for (const auto& r : recs) {
    EXPECT_EQ(r.text.front(), '"');
    EXPECT_EQ(r.text.back(), '"');
    EXPECT_NE(r.text[1], '"');
  }
}

TEST(Cli, UnknownModeIsUsageError) {
  const auto dir = testsupport::fresh_dir("cli_mode");
  EXPECT_EQ(run_cli("eval --benchmark " + toy() + " --endpoint mock:brittle:1 --mode sideways --out " +
                        (dir / "o.jsonl").string(),
                    dir / "err.txt"),
            2);
  const auto err = nlohmann::json::parse(read_file(dir / "err.txt"));
  EXPECT_EQ(err["error"]["kind"], "usage_error");
  EXPECT_EQ(run_cli("no-such-command"), 2);
  EXPECT_EQ(run_cli("decompose --outcomes /nonexistent/file --out " + (dir / "d.json").string()), 1);
}

TEST(Cli, ChainedCommandsProduceReports) {
  const auto dir = testsupport::fresh_dir("cli_chain");
  const auto d = dir.string();
  ASSERT_EQ(run_cli("--seed 4 perturb --input " + toy() + " --kind typos --intensity 2 --out " + d + "/typos.jsonl"), 0);
  ASSERT_EQ(run_cli("perturb --input " + toy() + " --kind pad_newlines --out " + d + "/pad.jsonl"), 0);
  ASSERT_EQ(run_cli("eval --benchmark " + toy() + " --dataset " + d + "/typos.jsonl --dataset " + d +
                    "/pad.jsonl --endpoint mock:brittle:2 --endpoint mock:brittle:9 --mode logprob --out " + d +
                    "/outcomes.jsonl --csv " + d + "/outcomes.csv"),
            0);
  ASSERT_EQ(run_cli("decompose --outcomes " + d + "/outcomes.jsonl --out " + d + "/dec.json --csv " + d + "/acc.csv"), 0);
  ASSERT_EQ(run_cli("rank --outcomes " + d + "/outcomes.jsonl --out " + d + "/rank.json --csv " + d + "/rank.csv"), 0);
  const auto dec = nlohmann::json::parse(read_file(dir / "dec.json"));
  EXPECT_EQ(dec["header"]["command"], "decompose");
  EXPECT_EQ(dec["components"].size(), 2u);
  const auto rank = nlohmann::json::parse(read_file(dir / "rank.json"));
  EXPECT_EQ(rank["perturbations"].size(), 2u);

  ASSERT_EQ(run_cli("sweep --input " + toy() + " --kind word_merge --max-intensity 2 --endpoint mock:brittle:2 --out " +
                    d + "/sweep.csv"),
            0);
  std::size_t data_rows = 0;
  for (const auto& row : parse_csv(read_file(dir / "sweep.csv"))) data_rows += row[0][0] != '#' ? 1 : 0;
  EXPECT_EQ(data_rows, 3u);
  ASSERT_EQ(run_cli("compose --input " + toy() + " --first typos --first pad_quotes --second word_merge --endpoint "
                    "mock:brittle:2 --out " + d + "/compose.csv"),
            0);
  ASSERT_EQ(run_cli("agree --annotations " + (testsupport::assets_dir() / "examples" / "annotations.csv").string() +
                    " --out " + d + "/agree.json"),
            0);
  ASSERT_EQ(run_cli("similarity --benchmark " + toy() + " --dataset " + d + "/pad.jsonl --out " + d + "/sim.json"), 0);
  const auto sim = nlohmann::json::parse(read_file(dir / "sim.json"));
  EXPECT_GT(sim["mean"].get<double>(), 0.99);
}

TEST(Cli, RunCommandWritesArtifacts) {
  const auto dir = testsupport::fresh_dir("cli_run");
  ASSERT_EQ(run_cli("--config " + (testsupport::assets_dir() / "examples" / "toy_run.json").string() +
                    " run --out-dir " + dir.string()),
            0);
  for (const auto* f : {"outcomes.jsonl", "outcomes.csv", "decomposition.json", "accuracy.csv", "rank.json", "rank.csv"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
}
