#include "robustmc/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "robustmc/errors.hpp"

namespace robustmc {

VarianceComponents decompose_values(std::span<const double> cells, std::size_t rows, std::size_t cols) {
  if (rows < 2 || cols < 2) {
    throw StatsError("decomposition needs at least 2 items and 2 conditions (got " + std::to_string(rows) +
                     " x " + std::to_string(cols) + ")");
  }
  if (cells.size() != rows * cols) throw StatsError("cell count does not match dimensions");
  const auto n = static_cast<double>(rows);
  const auto m = static_cast<double>(cols);

  double grand = 0.0;
  for (double v : cells) grand += v;
  grand /= n * m;

  double v_data = 0.0;
  double v_within = 0.0;
  double v_total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const auto row = cells.subspan(i * cols, cols);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= m;
    double within = 0.0;
    for (double v : row) {
      within += (v - mean) * (v - mean);
      v_total += (v - grand) * (v - grand);
    }
    v_within += within / m;
    v_data += (mean - grand) * (mean - grand);
  }

  VarianceComponents out;
  out.v_data = v_data / n;
  out.v_brittleness = v_within / n;
  out.v_total = v_total / (n * m);
  out.n_items = rows;
  out.n_conditions = cols;
  return out;
}

VarianceComponents decompose(const OutcomeMatrix& matrix) {
  std::vector<double> cells;
  cells.reserve(matrix.n_items() * matrix.n_conditions());
  for (std::size_t i = 0; i < matrix.n_items(); ++i) {
    for (std::size_t j = 0; j < matrix.n_conditions(); ++j) {
      const auto v = matrix.cell(i, j);
      if (v == OutcomeMatrix::kMissing) {
        throw StatsError("item '" + matrix.item_ids[i] + "' has missing cells; exclude incomplete rows first");
      }
      cells.push_back(static_cast<double>(v));
    }
  }
  auto out = decompose_values(cells, matrix.n_items(), matrix.n_conditions());
  out.model = matrix.model;
  out.benchmark = matrix.benchmark;
  return out;
}

std::vector<BrittlenessScore> brittleness_scores(const std::vector<VarianceComponents>& components,
                                                 Axis axis) {
  std::map<std::string, BrittlenessScore> by_subject;
  for (const auto& c : components) {
    const auto& subject = axis == Axis::model ? c.model : c.benchmark;
    auto& s = by_subject[subject];
    s.subject = subject;
    s.numerator += c.v_brittleness;
    s.denominator += c.v_total;
  }
  std::vector<BrittlenessScore> out;
  for (auto& [_, s] : by_subject) {
    if (s.denominator > 0.0) s.pi = s.numerator / s.denominator;
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

struct Pool {
  std::size_t cells = 0;
  std::size_t correct = 0;

  void add(const OutcomeMatrix& m, std::size_t col) {
    for (std::size_t i = 0; i < m.n_items(); ++i) {
      const auto v = m.cell(i, col);
      if (v == OutcomeMatrix::kMissing) continue;
      ++cells;
      correct += static_cast<std::size_t>(v);
    }
  }

  AccuracyRow row(std::string label, std::optional<double> baseline) const {
    AccuracyRow r;
    r.label = std::move(label);
    r.cells = cells;
    if (cells > 0) {
      r.accuracy = static_cast<double>(correct) / static_cast<double>(cells);
      if (baseline) r.drop = *baseline - *r.accuracy;
    }
    return r;
  }
};

}  // namespace

AccuracyReport accuracy_report(const OutcomeMatrix& matrix, const std::map<std::string, std::string>& grouping) {
  if (matrix.n_conditions() == 0 || matrix.conditions.front() != kBaselineCondition) {
    throw StatsError("accuracy report needs the baseline in column 0");
  }
  AccuracyReport out;
  Pool base;
  base.add(matrix, 0);
  out.baseline = base.row(std::string(kBaselineCondition), std::nullopt);
  const auto baseline = out.baseline.accuracy;
  if (baseline) out.baseline.drop = 0.0;

  Pool micro;
  std::vector<std::string> group_order;
  std::map<std::string, Pool> groups;
  for (std::size_t j = 1; j < matrix.n_conditions(); ++j) {
    Pool p;
    p.add(matrix, j);
    out.conditions.push_back(p.row(matrix.conditions[j], baseline));
    micro.add(matrix, j);
    const auto it = grouping.find(matrix.conditions[j]);
    if (it == grouping.end()) continue;
    if (!groups.contains(it->second)) group_order.push_back(it->second);
    groups[it->second].add(matrix, j);
  }
  for (const auto& g : group_order) out.groups.push_back(groups[g].row(g, baseline));
  out.micro = micro.row("micro_average", baseline);
  return out;
}

std::string format_points(double fraction) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
  std::string s = buf;
  if (s == "-0.00") s = "0.00";
  return s;
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    // Positions i..j (0-based) share rank mean(i+1..j+1).
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw StatsError("spearman: length mismatch");
  if (x.size() < 2) throw StatsError("spearman: need at least 2 observations");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const auto n = static_cast<double>(x.size());
  // Average ranks always have mean (n+1)/2.
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean;
    const double dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

RankStability rank_stability(const std::vector<TaskAccuracies>& tasks) {
  RankStability out;
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::optional<double>>> rhos;
  for (const auto& task : tasks) {
    for (const auto& [pert, acc] : task.perturbed) {
      if (acc.size() != task.baseline.size()) {
        throw StatsError("task '" + task.task + "': perturbation '" + pert + "' has " +
                         std::to_string(acc.size()) + " models, baseline has " +
                         std::to_string(task.baseline.size()));
      }
      if (!rhos.contains(pert)) order.push_back(pert);
      const auto rho = spearman(task.baseline, acc);
      rhos[pert].push_back(rho);
      out.per_task[task.task][pert] = rho;
    }
  }
  std::sort(order.begin(), order.end());
  for (const auto& pert : order) {
    RankStabilityRow row;
    row.perturbation = pert;
    double sum = 0.0;
    std::size_t defined = 0;
    for (const auto& rho : rhos[pert]) {
      ++row.tasks;
      if (!rho) {
        ++row.undefined;
        continue;
      }
      sum += *rho;
      ++defined;
      if (*rho < 1.0 - kRankChangeTolerance) ++row.changed;
    }
    if (defined > 0) row.mean_rho = sum / static_cast<double>(defined);
    out.changed_cases += row.changed;
    out.total_cases += defined;
    if (row.mean_rho) {
      ++out.total_perturbations;
      if (*row.mean_rho < 1.0 - kRankChangeTolerance) ++out.changed_perturbations;
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

double mcnemar(std::uint64_t b, std::uint64_t c, bool continuity) {
  if (b + c == 0) throw StatsError("mcnemar: no discordant pairs");
  const double diff = std::fabs(static_cast<double>(b) - static_cast<double>(c)) - (continuity ? 1.0 : 0.0);
  return diff * diff / static_cast<double>(b + c);
}

double chi2_1df_pvalue(double statistic) {
  if (statistic <= 0.0) return 1.0;
  return std::erfc(std::sqrt(statistic / 2.0));
}

namespace {

void check_scale(int v, int k) {
  if (v < 1 || v > k) throw StatsError("rating " + std::to_string(v) + " outside 1.." + std::to_string(k));
}

double quadratic_weight(int i, int j, int k) {
  const double d = static_cast<double>(i - j);
  return d * d / (static_cast<double>(k - 1) * static_cast<double>(k - 1));
}

}  // namespace

double weighted_kappa(std::span<const int> a, std::span<const int> b, int k) {
  if (a.size() != b.size()) throw StatsError("weighted_kappa: length mismatch");
  if (a.empty()) throw StatsError("weighted_kappa: no ratings");
  if (k < 2) throw StatsError("weighted_kappa: scale needs at least 2 levels");
  const auto kk = static_cast<std::size_t>(k);
  std::vector<double> observed(kk * kk, 0.0);
  std::vector<double> row(kk, 0.0);
  std::vector<double> col(kk, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    check_scale(a[i], k);
    check_scale(b[i], k);
    const auto x = static_cast<std::size_t>(a[i] - 1);
    const auto y = static_cast<std::size_t>(b[i] - 1);
    observed[x * kk + y] += 1.0;
    row[x] += 1.0;
    col[y] += 1.0;
  }
  const auto n = static_cast<double>(a.size());
  double num = 0.0;
  double den = 0.0;
  for (std::size_t x = 0; x < kk; ++x) {
    for (std::size_t y = 0; y < kk; ++y) {
      const double w = quadratic_weight(static_cast<int>(x), static_cast<int>(y), k);
      num += w * observed[x * kk + y] / n;
      den += w * row[x] * col[y] / (n * n);
    }
  }
  if (num == 0.0) return 1.0;
  return 1.0 - num / den;
}

std::optional<double> krippendorff_alpha_ordinal(const RatingTable& ratings, int k) {
  if (k < 2) throw StatsError("alpha: scale needs at least 2 levels");
  const auto kk = static_cast<std::size_t>(k);
  std::vector<double> coincidence(kk * kk, 0.0);
  for (const auto& item : ratings) {
    std::vector<int> values;
    for (const auto& v : item) {
      if (!v) continue;
      check_scale(*v, k);
      values.push_back(*v);
    }
    if (values.size() < 2) continue;
    const double w = 1.0 / static_cast<double>(values.size() - 1);
    for (std::size_t p = 0; p < values.size(); ++p) {
      for (std::size_t q = 0; q < values.size(); ++q) {
        if (p == q) continue;
        coincidence[static_cast<std::size_t>(values[p] - 1) * kk + static_cast<std::size_t>(values[q] - 1)] += w;
      }
    }
  }
  std::vector<double> marginal(kk, 0.0);
  double n = 0.0;
  for (std::size_t c = 0; c < kk; ++c) {
    for (std::size_t d = 0; d < kk; ++d) marginal[c] += coincidence[c * kk + d];
    n += marginal[c];
  }
  if (n <= 1.0) return std::nullopt;

  auto delta2 = [&](std::size_t c, std::size_t d) {
    if (c > d) std::swap(c, d);
    double s = 0.0;
    for (std::size_t g = c; g <= d; ++g) s += marginal[g];
    s -= (marginal[c] + marginal[d]) / 2.0;
    return s * s;
  };

  double d_o = 0.0;
  double d_e = 0.0;
  for (std::size_t c = 0; c < kk; ++c) {
    for (std::size_t d = 0; d < kk; ++d) {
      const double w = delta2(c, d);
      d_o += coincidence[c * kk + d] * w;
      d_e += marginal[c] * marginal[d] * w;
    }
  }
  d_o /= n;
  d_e /= n * (n - 1.0);
  if (d_e == 0.0) return std::nullopt;
  return 1.0 - d_o / d_e;
}

int consensus_rating(double mean, int k) {
  const int r = static_cast<int>(std::floor(mean + 0.5));
  return std::clamp(r, 1, k);
}

AgreementSuite agreement_suite(const RatingTable& human, std::span<const std::optional<int>> judge, int k) {
  AgreementSuite out;
  out.n_items = human.size();
  for (const auto& item : human) out.n_raters = std::max(out.n_raters, item.size());
  if (!judge.empty() && judge.size() != human.size()) {
    throw StatsError("agreement: judge ratings cover " + std::to_string(judge.size()) + " items, humans cover " +
                     std::to_string(human.size()));
  }

  double kappa_sum = 0.0;
  std::size_t kappa_pairs = 0;
  double exact_sum = 0.0;
  std::size_t exact_pairs = 0;
  for (std::size_t r1 = 0; r1 < out.n_raters; ++r1) {
    for (std::size_t r2 = r1 + 1; r2 < out.n_raters; ++r2) {
      std::vector<int> a;
      std::vector<int> b;
      for (const auto& item : human) {
        if (r2 >= item.size() || !item[r1] || !item[r2]) continue;
        a.push_back(*item[r1]);
        b.push_back(*item[r2]);
      }
      if (a.empty()) continue;
      kappa_sum += weighted_kappa(a, b, k);
      ++kappa_pairs;
      std::size_t same = 0;
      for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
      exact_sum += static_cast<double>(same) / static_cast<double>(a.size());
      ++exact_pairs;
    }
  }
  if (kappa_pairs > 0) out.pairwise_kappa_mean = kappa_sum / static_cast<double>(kappa_pairs);
  if (exact_pairs > 0) out.exact_agreement = exact_sum / static_cast<double>(exact_pairs);
  out.alpha = krippendorff_alpha_ordinal(human, k);

  std::vector<int> judged;
  std::vector<int> consensus;
  std::vector<double> judged_real;
  std::vector<double> mean_real;
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < judge.size(); ++i) {
    if (!judge[i]) continue;
    check_scale(*judge[i], k);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& v : human[i]) {
      if (!v) continue;
      check_scale(*v, k);
      sum += *v;
      ++count;
    }
    if (count == 0) continue;
    const double mean = sum / static_cast<double>(count);
    judged.push_back(*judge[i]);
    consensus.push_back(consensus_rating(mean, k));
    judged_real.push_back(*judge[i]);
    mean_real.push_back(mean);
    abs_sum += std::fabs(*judge[i] - mean);
  }
  out.judged_items = judged.size();
  if (!judged.empty()) {
    out.judge_kappa = weighted_kappa(judged, consensus, k);
    std::size_t same = 0;
    for (std::size_t i = 0; i < judged.size(); ++i) same += judged[i] == consensus[i];
    out.judge_exact = static_cast<double>(same) / static_cast<double>(judged.size());
    out.mae = abs_sum / static_cast<double>(judged.size());
    if (judged.size() >= 2) out.spearman = spearman(judged_real, mean_real);
  }
  return out;
}

}  // namespace robustmc
