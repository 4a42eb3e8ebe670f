#include "robustmc/scoring.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "robustmc/corpus.hpp"
#include "robustmc/errors.hpp"
#include "robustmc/text.hpp"

namespace robustmc {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::optional<std::size_t> extract_letter(std::string_view raw, std::size_t n_options) {
  std::optional<std::size_t> found;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const char c = raw[i];
    if (c < 'A' || c > 'Z') continue;
    const auto idx = static_cast<std::size_t>(c - 'A');
    if (idx >= n_options) continue;
    const bool left = i == 0 || !is_ascii_alnum(raw[i - 1]);
    const bool right = i + 1 == raw.size() || !is_ascii_alnum(raw[i + 1]);
    if (left && right) found = idx;
  }
  return found;
}

LogprobChoice judge_logprob(std::span<const double> scores, std::size_t n_options) {
  if (scores.size() != n_options || n_options == 0) {
    throw UsageError("expected " + std::to_string(n_options) + " scores, got " +
                     std::to_string(scores.size()));
  }
  LogprobChoice best;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best.index]) {
      best.index = i;
      best.tie = false;
    } else if (scores[i] == scores[best.index]) {
      best.tie = true;
    }
  }
  return best;
}

OutcomeMatrix::OutcomeMatrix(std::string model_, std::string benchmark_,
                             std::vector<std::string> item_ids_, std::vector<std::string> conditions_)
    : model(std::move(model_)),
      benchmark(std::move(benchmark_)),
      item_ids(std::move(item_ids_)),
      conditions(std::move(conditions_)),
      cells_(item_ids.size() * conditions.size(), kMissing) {}

std::int8_t OutcomeMatrix::cell(std::size_t item, std::size_t condition) const {
  return cells_.at(item * conditions.size() + condition);
}

void OutcomeMatrix::set(std::size_t item, std::size_t condition, std::int8_t value) {
  cells_.at(item * conditions.size() + condition) = value;
}

bool OutcomeMatrix::row_complete(std::size_t item) const {
  for (std::size_t j = 0; j < n_conditions(); ++j) {
    if (cell(item, j) == kMissing) return false;
  }
  return true;
}

std::size_t OutcomeMatrix::condition_index(std::string_view label) const {
  for (std::size_t j = 0; j < conditions.size(); ++j) {
    if (conditions[j] == label) return j;
  }
  throw UsageError("no condition '" + std::string(label) + "'");
}

std::size_t OutcomeMatrix::column_available(std::size_t condition) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < n_items(); ++i) n += cell(i, condition) != kMissing;
  return n;
}

std::optional<double> OutcomeMatrix::column_accuracy(std::size_t condition) const {
  std::size_t n = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n_items(); ++i) {
    const auto v = cell(i, condition);
    if (v == kMissing) continue;
    ++n;
    correct += static_cast<std::size_t>(v);
  }
  if (n == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(n);
}

OutcomeMatrix OutcomeMatrix::complete_rows(std::vector<std::string>* excluded) const {
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < n_items(); ++i) {
    if (row_complete(i)) {
      kept.push_back(item_ids[i]);
    } else if (excluded != nullptr) {
      excluded->push_back(item_ids[i]);
    }
  }
  OutcomeMatrix out(model, benchmark, kept, conditions);
  std::size_t r = 0;
  for (std::size_t i = 0; i < n_items(); ++i) {
    if (!row_complete(i)) continue;
    for (std::size_t j = 0; j < n_conditions(); ++j) out.set(r, j, cell(i, j));
    ++r;
  }
  return out;
}

BuildResult build_outcome_matrix(const std::string& model, const std::string& benchmark,
                                 const std::vector<ItemResult>& results) {
  std::vector<std::string> conditions;
  std::set<std::string> seen_conditions;
  std::set<std::string> items;
  for (const auto& r : results) {
    items.insert(r.item_id);
    if (seen_conditions.insert(r.condition).second) conditions.push_back(r.condition);
  }
  auto base = std::find(conditions.begin(), conditions.end(), kBaselineCondition);
  if (base == conditions.end()) throw UsageError("outcome matrix needs a baseline condition");
  std::rotate(conditions.begin(), base, base + 1);

  std::vector<std::string> item_ids(items.begin(), items.end());
  std::map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < item_ids.size(); ++i) row_of[item_ids[i]] = i;
  std::map<std::string, std::size_t> col_of;
  for (std::size_t j = 0; j < conditions.size(); ++j) col_of[conditions[j]] = j;

  BuildResult out{OutcomeMatrix(model, benchmark, item_ids, conditions), {}};
  std::set<std::pair<std::size_t, std::size_t>> filled;
  for (const auto& r : results) {
    const auto i = row_of.at(r.item_id);
    const auto j = col_of.at(r.condition);
    if (!filled.insert({i, j}).second) {
      throw UsageError("duplicate result for item '" + r.item_id + "' under '" + r.condition + "'");
    }
    if (r.chosen) out.matrix.set(i, j, *r.chosen == r.gold ? 1 : 0);
  }

  for (std::size_t j = 0; j < conditions.size(); ++j) {
    const auto missing = item_ids.size() - out.matrix.column_available(j);
    if (missing * 10 > item_ids.size()) {
      out.warnings.push_back("condition '" + conditions[j] + "' is missing for " +
                             std::to_string(missing) + " of " + std::to_string(item_ids.size()) +
                             " items");
    }
  }
  return out;
}

ordered_json outcome_to_json(const OutcomeMatrix& m) {
  ordered_json j;
  j["model"] = m.model;
  j["benchmark"] = m.benchmark;
  j["item_ids"] = m.item_ids;
  j["conditions"] = m.conditions;
  auto rows = ordered_json::array();
  for (std::size_t i = 0; i < m.n_items(); ++i) {
    auto row = ordered_json::array();
    for (std::size_t c = 0; c < m.n_conditions(); ++c) {
      const auto v = m.cell(i, c);
      if (v == OutcomeMatrix::kMissing) {
        row.push_back(nullptr);
      } else {
        row.push_back(static_cast<int>(v));
      }
    }
    rows.push_back(std::move(row));
  }
  j["Y"] = std::move(rows);
  return j;
}

OutcomeMatrix outcome_from_json(const json& j) {
  OutcomeMatrix m(j.at("model").get<std::string>(), j.at("benchmark").get<std::string>(),
                  j.at("item_ids").get<std::vector<std::string>>(),
                  j.at("conditions").get<std::vector<std::string>>());
  if (m.conditions.empty() || m.conditions.front() != kBaselineCondition) {
    throw Error("format_error", "outcome matrix must start with the baseline condition");
  }
  const auto& rows = j.at("Y");
  if (rows.size() != m.n_items()) throw Error("format_error", "Y row count does not match item_ids");
  for (std::size_t i = 0; i < m.n_items(); ++i) {
    if (rows[i].size() != m.n_conditions()) throw Error("format_error", "Y row width does not match conditions");
    for (std::size_t c = 0; c < m.n_conditions(); ++c) {
      const auto& v = rows[i][c];
      if (v.is_null()) continue;
      const auto x = v.get<int>();
      if (x != 0 && x != 1) throw Error("format_error", "Y cells must be 0, 1 or null");
      m.set(i, c, static_cast<std::int8_t>(x));
    }
  }
  return m;
}

std::vector<OutcomeMatrix> parse_outcomes(std::string_view content) {
  std::vector<OutcomeMatrix> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    const auto line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(line_no, "<json>", e.what());
    }
    if (is_header_line(j)) continue;
    try {
      out.push_back(outcome_from_json(j));
    } catch (const json::exception& e) {
      throw FormatError(line_no, "<outcome>", e.what());
    }
  }
  return out;
}

namespace {

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

}  // namespace

std::string outcomes_long_csv(const std::vector<OutcomeMatrix>& matrices) {
  std::string out = "model,benchmark,item_id,condition,correct\n";
  for (const auto& m : matrices) {
    for (std::size_t i = 0; i < m.n_items(); ++i) {
      for (std::size_t c = 0; c < m.n_conditions(); ++c) {
        const auto v = m.cell(i, c);
        out += csv_field(m.model) + "," + csv_field(m.benchmark) + "," + csv_field(m.item_ids[i]) + "," +
               csv_field(m.conditions[c]) + "," +
               (v == OutcomeMatrix::kMissing ? std::string() : std::to_string(v)) + "\n";
      }
    }
  }
  return out;
}

}  // namespace robustmc
