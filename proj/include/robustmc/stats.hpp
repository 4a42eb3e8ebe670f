#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "robustmc/scoring.hpp"

namespace robustmc {

struct VarianceComponents {
  std::string model;
  std::string benchmark;
  double v_data = 0.0;
  double v_brittleness = 0.0;
  double v_total = 0.0;
  std::size_t n_items = 0;
  std::size_t n_conditions = 0;
};

// Population-variance estimators. v_data is the variance of row means,
// v_brittleness the mean of row variances, v_total the variance of all cells.
// Requires a complete matrix with at least 2 items and 2 conditions.
VarianceComponents decompose(const OutcomeMatrix& matrix);
// Same estimators over a row-major real matrix.
VarianceComponents decompose_values(std::span<const double> cells, std::size_t rows, std::size_t cols);

enum class Axis { model, benchmark };

struct BrittlenessScore {
  std::string subject;
  std::optional<double> pi;
  double numerator = 0.0;
  double denominator = 0.0;
};

// Sums components per subject before dividing. Sorted by subject.
std::vector<BrittlenessScore> brittleness_scores(const std::vector<VarianceComponents>& components,
                                                 Axis axis);

struct AccuracyRow {
  std::string label;
  std::optional<double> accuracy;
  std::optional<double> drop;  // baseline - accuracy
  std::size_t cells = 0;
};

struct AccuracyReport {
  AccuracyRow baseline;
  std::vector<AccuracyRow> conditions;
  std::vector<AccuracyRow> groups;
  AccuracyRow micro;
};

// `grouping` maps condition labels to group names; unmapped conditions are
// left out of every group. Group and micro rows pool available cells.
AccuracyReport accuracy_report(const OutcomeMatrix& matrix,
                               const std::map<std::string, std::string>& grouping = {});

// Fraction rendered as percentage points with two decimals ("10.00").
std::string format_points(double fraction);

std::vector<double> average_ranks(std::span<const double> x);
// Pearson correlation of average ranks; nullopt when either side has no
// rank variance.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

struct TaskAccuracies {
  std::string task;
  std::vector<double> baseline;                              // one per model
  std::map<std::string, std::vector<double>> perturbed;       // perturbation -> per model
};

struct RankStabilityRow {
  std::string perturbation;
  std::optional<double> mean_rho;
  std::size_t tasks = 0;
  std::size_t changed = 0;
  std::size_t undefined = 0;
};

struct RankStability {
  std::vector<RankStabilityRow> rows;
  // task -> perturbation -> rho
  std::map<std::string, std::map<std::string, std::optional<double>>> per_task;
  // Unit 1: (task, perturbation) cases with a defined rho.
  std::size_t changed_cases = 0;
  std::size_t total_cases = 0;
  // Unit 2: perturbations whose task-averaged rho is below 1.
  std::size_t changed_perturbations = 0;
  std::size_t total_perturbations = 0;
};

inline constexpr double kRankChangeTolerance = 1e-12;

RankStability rank_stability(const std::vector<TaskAccuracies>& tasks);

double mcnemar(std::uint64_t b, std::uint64_t c, bool continuity = true);
// Upper tail of chi-squared with one degree of freedom.
double chi2_1df_pvalue(double statistic);

// Quadratically weighted Cohen's kappa on a 1..K scale. Identical vectors
// give 1.
double weighted_kappa(std::span<const int> a, std::span<const int> b, int k);

using RatingTable = std::vector<std::vector<std::optional<int>>>;  // items x raters

// Ordinal-metric alpha over pairable values; nullopt when expected
// disagreement is zero.
std::optional<double> krippendorff_alpha_ordinal(const RatingTable& ratings, int k);

// Half-up rounding clamped to [1, k].
int consensus_rating(double mean, int k);

struct AgreementSuite {
  std::size_t n_items = 0;
  std::size_t n_raters = 0;
  std::optional<double> pairwise_kappa_mean;
  std::optional<double> alpha;
  std::optional<double> exact_agreement;
  std::optional<double> judge_kappa;
  std::optional<double> judge_exact;
  std::optional<double> mae;
  std::optional<double> spearman;
  std::size_t judged_items = 0;
};

AgreementSuite agreement_suite(const RatingTable& human, std::span<const std::optional<int>> judge, int k);

}  // namespace robustmc
