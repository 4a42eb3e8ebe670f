#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "robustmc/errors.hpp"
#include "robustmc/stats.hpp"
#include "support.hpp"

using namespace robustmc;

namespace {

VarianceComponents decompose_rows(const std::vector<std::vector<double>>& y) {
  std::vector<double> flat;
  for (const auto& r : y) flat.insert(flat.end(), r.begin(), r.end());
  return decompose_values(flat, y.size(), y[0].size());
}

OutcomeMatrix matrix_of(const std::vector<std::vector<int>>& y, const std::string& model = "m",
                        const std::string& bench = "b") {
  std::vector<std::string> items;
  for (std::size_t i = 0; i < y.size(); ++i) items.push_back("i" + std::to_string(i));
  std::vector<std::string> conds{"baseline"};
  for (std::size_t j = 1; j < y[0].size(); ++j) conds.push_back("c" + std::to_string(j));
  OutcomeMatrix m(model, bench, items, conds);
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < y[i].size(); ++j) m.set(i, j, static_cast<std::int8_t>(y[i][j]));
  }
  return m;
}

VarianceComponents components(const std::string& model, const std::string& bench, double vb, double vt) {
  VarianceComponents c;
  c.model = model;
  c.benchmark = bench;
  c.v_brittleness = vb;
  c.v_total = vt;
  c.v_data = vt - vb;
  return c;
}

}  // namespace

TEST(Decompose, PureWithinAndPureBetween) {
  auto a = decompose(matrix_of({{1, 0}, {1, 0}}));
  EXPECT_EQ(a.v_data, 0.0);
  EXPECT_EQ(a.v_brittleness, 0.25);
  EXPECT_EQ(a.v_total, 0.25);
  auto b = decompose(matrix_of({{1, 1}, {0, 0}}));
  EXPECT_EQ(b.v_data, 0.25);
  EXPECT_EQ(b.v_brittleness, 0.0);
  EXPECT_EQ(b.v_total, 0.25);
}

TEST(Decompose, WorkedExample) {
  const auto c = decompose(matrix_of({{1, 0, 1}, {1, 1, 1}, {0, 0, 0}}));
  EXPECT_NEAR(c.v_data, 14.0 / 81, 1e-12);
  EXPECT_NEAR(c.v_brittleness, 6.0 / 81, 1e-12);
  EXPECT_NEAR(c.v_total, 20.0 / 81, 1e-12);
  EXPECT_EQ(c.n_items, 3u);
  EXPECT_EQ(c.n_conditions, 3u);
}

TEST(Decompose, DegenerateShapesAreErrors) {
  EXPECT_THROW(decompose(matrix_of({{1, 0}})), StatsError);
  EXPECT_THROW(decompose(matrix_of({{1}, {0}})), StatsError);
  const std::vector<double> cells{1, 0, 1};
  EXPECT_THROW(decompose_values(cells, 1, 3), StatsError);
  EXPECT_THROW(decompose_values(cells, 2, 2), StatsError);
}

TEST(Decompose, RandomRealMatricesMatchOracle) {
  testsupport::TextGen gen(61);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int round = 0; round < 200; ++round) {
    const auto rows = gen.uniform(2, 20);
    const auto cols = gen.uniform(2, 10);
    std::vector<std::vector<double>> y(rows, std::vector<double>(cols));
    for (auto& r : y) {
      for (auto& v : r) v = u(gen.engine());
    }
    const auto got = decompose_rows(y);
    const auto want = testsupport::oracle_decompose(y);
    EXPECT_NEAR(got.v_data, want.v_data, 1e-12);
    EXPECT_NEAR(got.v_brittleness, want.v_brittleness, 1e-12);
    EXPECT_NEAR(got.v_total, want.v_total, 1e-12);
    EXPECT_NEAR(got.v_total, got.v_data + got.v_brittleness, 1e-12);
  }
}

TEST(Decompose, InvariantUnderRowAndColumnPermutation) {
  testsupport::TextGen gen(67);
  for (int round = 0; round < 100; ++round) {
    const auto rows = gen.uniform(2, 12);
    const auto cols = gen.uniform(2, 8);
    std::vector<std::vector<double>> y(rows, std::vector<double>(cols));
    for (auto& r : y) {
      for (auto& v : r) v = gen.chance(0.6) ? 1.0 : 0.0;
    }
    auto shuffled = y;
    std::shuffle(shuffled.begin(), shuffled.end(), gen.engine());
    std::vector<std::size_t> perm(cols);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen.engine());
    for (auto& r : shuffled) {
      auto copy = r;
      for (std::size_t j = 0; j < cols; ++j) r[j] = copy[perm[j]];
    }
    const auto a = decompose_rows(y);
    const auto b = decompose_rows(shuffled);
    EXPECT_NEAR(a.v_data, b.v_data, 1e-12);
    EXPECT_NEAR(a.v_brittleness, b.v_brittleness, 1e-12);
  }
}

TEST(Brittleness, WorkedExampleIsPointThree) {
  const auto s = brittleness_scores({components("m", "b", 6.0 / 81, 20.0 / 81)}, Axis::model);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_NEAR(s[0].pi.value(), 0.3, 1e-12);
}

TEST(Brittleness, SumsBeforeDividing) {
  const auto s = brittleness_scores({components("m", "b1", 0.1, 0.2), components("m", "b2", 0.0, 0.2)},
                                    Axis::model);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s[0].pi.value(), 0.25);
  const auto per_bench = brittleness_scores(
      {components("m", "b1", 0.1, 0.2), components("m", "b2", 0.0, 0.2)}, Axis::benchmark);
  ASSERT_EQ(per_bench.size(), 2u);
  EXPECT_EQ(per_bench[0].subject, "b1");
  EXPECT_DOUBLE_EQ(per_bench[0].pi.value(), 0.5);
}

TEST(Brittleness, ZeroTotalIsNull) {
  const auto s = brittleness_scores({components("m", "b", 0.0, 0.0)}, Axis::model);
  EXPECT_FALSE(s[0].pi.has_value());
}

TEST(Accuracy, DropInPoints) {
  std::vector<std::vector<int>> y(10, std::vector<int>{1, 1});
  y[0] = {0, 0};
  y[1] = {0, 0};
  y[2][1] = 0;
  const auto r = accuracy_report(matrix_of(y));
  EXPECT_DOUBLE_EQ(r.baseline.accuracy.value(), 0.8);
  ASSERT_EQ(r.conditions.size(), 1u);
  EXPECT_DOUBLE_EQ(r.conditions[0].accuracy.value(), 0.7);
  EXPECT_EQ(format_points(r.conditions[0].drop.value()), "10.00");
  EXPECT_EQ(format_points(-0.0), "0.00");
}

TEST(Accuracy, GroupPoolsEqualCounts) {
  std::vector<std::vector<int>> y(5, std::vector<int>{1, 1, 1});
  y[0][1] = 0;
  y[1][1] = 0;
  y[0][2] = 0;
  const auto r = accuracy_report(matrix_of(y), {{"c1", "padding"}, {"c2", "padding"}});
  ASSERT_EQ(r.groups.size(), 1u);
  EXPECT_EQ(r.groups[0].label, "padding");
  EXPECT_DOUBLE_EQ(r.groups[0].accuracy.value(), 0.7);
  EXPECT_EQ(r.groups[0].cells, 10u);
  EXPECT_DOUBLE_EQ(r.micro.accuracy.value(), 0.7);
}

TEST(Spearman, Examples) {
  const std::vector<double> x{1, 2, 3};
  const std::vector<double> y{3, 2, 1};
  EXPECT_DOUBLE_EQ(spearman(x, x).value(), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, y).value(), -1.0);
  const std::vector<double> flat{2, 2, 2};
  EXPECT_FALSE(spearman(x, flat).has_value());
  const std::vector<double> one{1};
  EXPECT_THROW(spearman(one, one), StatsError);
  const std::vector<double> two{1, 2};
  EXPECT_THROW(spearman(x, two), StatsError);
}

TEST(Spearman, AverageRanksForTies) {
  const std::vector<double> x{10, 20, 20, 5};
  EXPECT_EQ(average_ranks(x), (std::vector<double>{2, 3.5, 3.5, 1}));
}

TEST(Spearman, PropertiesOnRandomVectors) {
  testsupport::TextGen gen(71);
  for (int round = 0; round < 300; ++round) {
    const auto n = gen.uniform(2, 15);
    std::vector<double> x(n);
    std::vector<double> y(n);
    for (auto& v : x) v = static_cast<double>(gen.uniform(0, 6));
    for (auto& v : y) v = static_cast<double>(gen.uniform(0, 6));
    const auto r = spearman(x, y);
    const auto want = testsupport::oracle_spearman(x, y);
    ASSERT_EQ(r.has_value(), want.has_value());
    if (!r) continue;
    EXPECT_NEAR(*r, *want, 1e-12);
    EXPECT_LE(std::abs(*r), 1.0);
    EXPECT_NEAR(spearman(y, x).value(), *r, 1e-15);
    std::vector<double> scaled;
    for (double v : x) scaled.push_back(3 * v + 7);
    EXPECT_NEAR(spearman(scaled, y).value(), *r, 1e-12);
  }
}

TEST(RankStability, IdenticalTablesAreStable) {
  TaskAccuracies t{"toy", {0.5, 0.6, 0.7}, {{"typos@1", {0.5, 0.6, 0.7}}}};
  const auto r = rank_stability({t});
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_DOUBLE_EQ(r.rows[0].mean_rho.value(), 1.0);
  EXPECT_EQ(r.changed_cases, 0u);
  EXPECT_EQ(r.changed_perturbations, 0u);
}

TEST(RankStability, AdjacentSwapAmongSix) {
  TaskAccuracies t{"toy", {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, {{"pad", {0.1, 0.2, 0.4, 0.3, 0.5, 0.6}}}};
  const auto r = rank_stability({t});
  EXPECT_NEAR(r.rows[0].mean_rho.value(), 1.0 - 6.0 * 2 / (6.0 * 35), 1e-12);
  EXPECT_EQ(r.changed_cases, 1u);
  EXPECT_EQ(r.total_cases, 1u);
  EXPECT_EQ(r.changed_perturbations, 1u);
}

TEST(RankStability, UndefinedRhoIsSkipped) {
  TaskAccuracies a{"a", {0.5, 0.5}, {{"p", {0.1, 0.9}}}};
  TaskAccuracies b{"b", {0.1, 0.9}, {{"p", {0.9, 0.1}}}};
  const auto r = rank_stability({a, b});
  EXPECT_EQ(r.rows[0].undefined, 1u);
  EXPECT_EQ(r.rows[0].tasks, 2u);
  EXPECT_DOUBLE_EQ(r.rows[0].mean_rho.value(), -1.0);
  EXPECT_EQ(r.total_cases, 1u);
}

TEST(McNemar, Values) {
  EXPECT_NEAR(mcnemar(3413, 1454), 787.706, 1e-3);
  EXPECT_EQ(mcnemar(5, 5, false), 0.0);
  EXPECT_DOUBLE_EQ(mcnemar(10, 0, false), 10.0);
  EXPECT_THROW(mcnemar(0, 0), StatsError);
  EXPECT_NEAR(chi2_1df_pvalue(3.841458820694124), 0.05, 1e-9);
}

TEST(Kappa, IdenticalAndReversed) {
  const std::vector<int> a{1, 2, 3, 4, 5};
  const std::vector<int> b{5, 4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(weighted_kappa(a, a, 5), 1.0);
  const std::vector<int> c{3, 3, 3};
  EXPECT_DOUBLE_EQ(weighted_kappa(c, c, 5), 1.0);
  EXPECT_NEAR(weighted_kappa(a, b, 5), testsupport::oracle_weighted_kappa(a, b, 5), 1e-12);
  EXPECT_NEAR(weighted_kappa(a, b, 5), -1.0, 1e-12);
}

TEST(Kappa, MatchesConfusionMatrixOracle) {
  testsupport::TextGen gen(73);
  for (int round = 0; round < 200; ++round) {
    const int k = static_cast<int>(gen.uniform(2, 7));
    const auto n = gen.uniform(2, 40);
    std::vector<int> a(n);
    std::vector<int> b(n);
    for (auto& v : a) v = static_cast<int>(gen.uniform(1, k));
    for (std::size_t i = 0; i < n; ++i) b[i] = gen.chance(0.5) ? a[i] : static_cast<int>(gen.uniform(1, k));
    const double want = testsupport::oracle_weighted_kappa(a, b, k);
    if (!std::isfinite(want)) continue;
    EXPECT_NEAR(weighted_kappa(a, b, k), want, 1e-9);
  }
}

TEST(Alpha, MaximalOrdinalDisagreement) {
  RatingTable t{{1, 5}, {5, 1}};
  EXPECT_NEAR(krippendorff_alpha_ordinal(t, 5).value(), -0.5, 1e-12);
  RatingTable perfect{{2, 2, 2}, {4, 4, 4}, {1, 1, std::nullopt}};
  EXPECT_DOUBLE_EQ(krippendorff_alpha_ordinal(perfect, 5).value(), 1.0);
  RatingTable constant{{3, 3}, {3, 3}};
  EXPECT_FALSE(krippendorff_alpha_ordinal(constant, 5).has_value());
}

TEST(Alpha, MatchesCoincidenceOracleAndRaterOrder) {
  testsupport::TextGen gen(79);
  for (int round = 0; round < 200; ++round) {
    const int k = static_cast<int>(gen.uniform(2, 6));
    const auto items = gen.uniform(2, 15);
    const auto raters = gen.uniform(2, 5);
    RatingTable t(items, std::vector<std::optional<int>>(raters));
    for (auto& row : t) {
      for (auto& v : row) {
        if (!gen.chance(0.15)) v = static_cast<int>(gen.uniform(1, k));
      }
    }
    const auto want = testsupport::oracle_alpha_ordinal(t, k);
    const auto got = krippendorff_alpha_ordinal(t, k);
    ASSERT_EQ(got.has_value(), want.has_value());
    if (!got) continue;
    EXPECT_NEAR(*got, *want, 1e-9);
    auto permuted = t;
    for (auto& row : permuted) std::reverse(row.begin(), row.end());
    EXPECT_NEAR(krippendorff_alpha_ordinal(permuted, k).value(), *got, 1e-12);
  }
}

TEST(Agreement, ConsensusRounding) {
  EXPECT_EQ(consensus_rating(3.5, 5), 4);
  EXPECT_EQ(consensus_rating(3.49, 5), 3);
  EXPECT_EQ(consensus_rating(5.5, 5), 5);
  EXPECT_EQ(consensus_rating(0.2, 5), 1);
}

TEST(Agreement, ThreeIdenticalRaters) {
  RatingTable t{{1, 1, 1}, {3, 3, 3}, {5, 5, 5}, {2, 2, 2}};
  const std::vector<std::optional<int>> judge{1, 3, 5, 2};
  const auto s = agreement_suite(t, judge, 5);
  EXPECT_DOUBLE_EQ(s.exact_agreement.value(), 1.0);
  EXPECT_DOUBLE_EQ(s.pairwise_kappa_mean.value(), 1.0);
  EXPECT_DOUBLE_EQ(s.alpha.value(), 1.0);
  EXPECT_DOUBLE_EQ(s.judge_exact.value(), 1.0);
  EXPECT_DOUBLE_EQ(s.judge_kappa.value(), 1.0);
  EXPECT_DOUBLE_EQ(s.mae.value(), 0.0);
  EXPECT_DOUBLE_EQ(s.spearman.value(), 1.0);
}

TEST(Agreement, HandComputedSuite) {
  // Human means 1.5, 3, 4.5 round to 2, 3, 5.
  RatingTable t{{1, 2}, {3, 3}, {4, 5}};
  const std::vector<std::optional<int>> judge{2, 4, std::nullopt};
  const auto s = agreement_suite(t, judge, 5);
  EXPECT_EQ(s.judged_items, 2u);
  EXPECT_NEAR(s.exact_agreement.value(), 1.0 / 3, 1e-12);
  EXPECT_NEAR(s.judge_exact.value(), 0.5, 1e-12);
  EXPECT_NEAR(s.mae.value(), (0.5 + 1.0) / 2, 1e-12);
  const std::vector<int> a{1, 3, 4};
  const std::vector<int> b{2, 3, 5};
  EXPECT_NEAR(s.pairwise_kappa_mean.value(), testsupport::oracle_weighted_kappa(a, b, 5), 1e-12);
}
