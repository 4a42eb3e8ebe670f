#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace robustmc {

// Index of the last standalone uppercase letter in A..(A+n_options-1), so
// "(B)", "B.", "answer is B" and "**B**" all count. nullopt means extraction
// failed and the cell is recorded missing.
std::optional<std::size_t> extract_letter(std::string_view raw, std::size_t n_options);

struct LogprobChoice {
  std::size_t index = 0;
  bool tie = false;
};

// Argmax with ties going to the lowest index.
LogprobChoice judge_logprob(std::span<const double> scores, std::size_t n_options);

inline constexpr std::string_view kBaselineCondition = "baseline";

struct ItemResult {
  std::string item_id;
  std::string condition;
  std::optional<std::size_t> chosen;  // nullopt: skipped or extraction failed
  std::size_t gold = 0;
};

// Binary correctness, rows = items, columns = conditions, column 0 is the
// unperturbed baseline.
class OutcomeMatrix {
 public:
  static constexpr std::int8_t kMissing = -1;

  OutcomeMatrix() = default;
  OutcomeMatrix(std::string model, std::string benchmark, std::vector<std::string> item_ids,
                std::vector<std::string> conditions);

  std::string model;
  std::string benchmark;
  std::vector<std::string> item_ids;
  std::vector<std::string> conditions;

  std::size_t n_items() const { return item_ids.size(); }
  std::size_t n_conditions() const { return conditions.size(); }

  std::int8_t cell(std::size_t item, std::size_t condition) const;
  void set(std::size_t item, std::size_t condition, std::int8_t value);
  bool row_complete(std::size_t item) const;
  std::size_t condition_index(std::string_view label) const;

  // Mean over available cells; nullopt when the column has none.
  std::optional<double> column_accuracy(std::size_t condition) const;
  std::size_t column_available(std::size_t condition) const;

  // Drops rows with any missing cell. Complete-case input for decompose().
  OutcomeMatrix complete_rows(std::vector<std::string>* excluded = nullptr) const;

  friend bool operator==(const OutcomeMatrix&, const OutcomeMatrix&) = default;

 private:
  std::vector<std::int8_t> cells_;
};

struct BuildResult {
  OutcomeMatrix matrix;
  std::vector<std::string> warnings;
};

// Y[i][j] = 1 iff chosen == gold. Items are ordered by id, conditions by
// first appearance with the baseline moved to column 0. Duplicate
// (item, condition) pairs and a missing baseline are errors; a condition
// missing for more than 10% of items produces a warning.
BuildResult build_outcome_matrix(const std::string& model, const std::string& benchmark,
                                 const std::vector<ItemResult>& results);

nlohmann::ordered_json outcome_to_json(const OutcomeMatrix& m);
OutcomeMatrix outcome_from_json(const nlohmann::json& j);
// Outcome file body (no header); one object per line.
std::vector<OutcomeMatrix> parse_outcomes(std::string_view content);
// model,benchmark,item_id,condition,correct with empty `correct` for missing.
std::string outcomes_long_csv(const std::vector<OutcomeMatrix>& matrices);

}  // namespace robustmc
