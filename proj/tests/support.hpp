#pragma once

// Generators and independent oracles shared by the unit tests and the
// acceptance binary. Nothing here calls into the library's own helpers for
// the quantity under test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "robustmc/corpus.hpp"
#include "robustmc/perturb.hpp"

namespace testsupport {

inline std::filesystem::path assets_dir() { return ROBUSTMC_TEST_ASSETS; }
inline std::filesystem::path golden_dir() { return ROBUSTMC_TEST_GOLDEN; }
inline std::filesystem::path cli_path() { return ROBUSTMC_TEST_CLI; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("robustmc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// Text generation

inline bool ws(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
inline bool alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
inline bool digit(char c) { return c >= '0' && c <= '9'; }

struct GeneratedText {
  std::string text;
  std::vector<robustmc::ProtectedSpan> protected_spans;
};

class TextGen {
 public:
  explicit TextGen(std::uint64_t seed) : rng_(seed) {}

  std::size_t uniform(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }
  template <typename T>
  const T& pick(const std::vector<T>& v) {
    return v[uniform(0, v.size() - 1)];
  }

  std::string word() {
    static const std::vector<std::string> kWords = {
        "the", "a", "of", "and", "to", "in", "is", "on", "it", "for", "with", "as", "was", "at", "by", "an",
        "or", "The", "answer", "question", "molecule", "river", "theorem", "quickly", "between", "measure",
        "value", "energy", "history", "matrix", "balance", "ab", "go", "cd", "xy", "tree", "Which", "planet",
        "noon", "little", "cells", "seed", "bookkeeper", "aaaa"};
    static const std::vector<std::string> kOdd = {
        "don't", "e.g.", "na\xC3\xAFve", "caf\xC3\xA9", "x_1", "3.14", "42", "1,000", "$x+1=2$", "`code`",
        "2+3", "a*b", "(see", "note)", "\"quoted\"", "\xE2\x88\x92" "5", "abc123", "well-known", "C.", "B."};
    std::string w = chance(0.15) ? pick(kOdd) : pick(kWords);
    if (chance(0.15)) w += std::string(1, ".,;:?!"[uniform(0, 5)]);
    return w;
  }

  std::string separator() {
    const auto r = uniform(0, 19);
    if (r < 14) return " ";
    if (r < 16) return "  ";
    if (r < 17) return "   ";
    if (r < 18) return "\n";
    if (r < 19) return " \n";
    return "\t";
  }

  // Non-empty text without leading or trailing whitespace.
  std::string text(std::size_t min_words = 1, std::size_t max_words = 30) {
    const auto n = uniform(min_words, max_words);
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
      if (i > 0) out += separator();
      out += word();
    }
    return out;
  }

  std::string plain_words(std::size_t n) {
    static const std::vector<std::string> kPlain = {"stone", "river", "apple", "garden", "window",
                                                    "silver", "planet", "motion", "forest", "bridge"};
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
      if (i > 0) out += ' ';
      out += pick(kPlain);
    }
    return out;
  }

  // Detected spans plus, sometimes, one extra arbitrary span on character
  // boundaries.
  GeneratedText protected_text(std::size_t min_words = 1, std::size_t max_words = 30) {
    GeneratedText g;
    g.text = text(min_words, max_words);
    g.protected_spans = robustmc::detect_protected(g.text);
    if (chance(0.3) && g.text.size() > 2) {
      auto b = uniform(0, g.text.size() - 1);
      auto e = uniform(b + 1, std::min(g.text.size(), b + 8));
      while (b > 0 && (static_cast<unsigned char>(g.text[b]) & 0xC0) == 0x80) --b;
      while (e < g.text.size() && (static_cast<unsigned char>(g.text[e]) & 0xC0) == 0x80) ++e;
      g.protected_spans.push_back({{b, e}, robustmc::ProtectReason::code});
    }
    return g;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Text oracles

inline std::string strip_ws(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (!ws(c)) out.push_back(c);
  }
  return out;
}

inline std::string only_ws(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (ws(c)) out.push_back(c);
  }
  return out;
}

inline std::size_t count_char(std::string_view s, char c) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), c));
}

inline std::vector<std::string> tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (ws(c)) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Runs of ' ' with a non-whitespace byte on each side, as (begin, length).
inline std::vector<std::pair<std::size_t, std::size_t>> space_gaps(std::string_view s) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < s.size();) {
    if (s[i] != ' ') {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && s[j] == ' ') ++j;
    if (i > 0 && j < s.size() && !ws(s[i - 1]) && !ws(s[j])) out.emplace_back(i, j - i);
    i = j;
  }
  return out;
}

inline std::size_t count_alpha_runs(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (alpha(s[i]) && (i == 0 || !alpha(s[i - 1]))) ++n;
  }
  return n;
}

// Optimal string alignment distance (adjacent transpositions cost 1).
inline std::size_t osa_distance(std::string_view a, std::string_view b) {
  const auto n = a.size();
  const auto m = b.size();
  std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t cost = a[i - 1] == b[j - 1] ? 0 : 1;
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost});
      if (i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1]) {
        d[i][j] = std::min(d[i][j], d[i - 2][j - 2] + 1);
      }
    }
  }
  return d[n][m];
}

inline std::vector<std::string> stopword_list() {
  std::vector<std::string> out;
  std::istringstream in(slurp(assets_dir() / "stopwords" / "en_v1.txt"));
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && ws(line.back())) line.pop_back();
    if (!line.empty() && line[0] != '#') out.push_back(line);
  }
  return out;
}

inline bool touches_protected(std::size_t b, std::size_t e, const std::vector<robustmc::ProtectedSpan>& prot) {
  for (const auto& p : prot) {
    if (b < p.span.end && p.span.begin < e) return true;
  }
  return false;
}

inline bool boundary_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && !alpha(c) && !digit(c) && c != '_';
}

// Alphabetic runs delimited by ASCII non-word bytes or the text ends.
inline std::vector<std::pair<std::size_t, std::size_t>> standalone_words(std::string_view s) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < s.size();) {
    if (!alpha(s[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && alpha(s[j])) ++j;
    if ((i == 0 || boundary_byte(s[i - 1])) && (j == s.size() || boundary_byte(s[j]))) out.emplace_back(i, j);
    i = j;
  }
  return out;
}

// Number of eligible sites for a countable kind, counted from the rules.
inline std::size_t expected_sites(std::string_view s, const std::vector<robustmc::ProtectedSpan>& prot,
                                  robustmc::PerturbationKind kind, std::size_t run_len = 3) {
  using robustmc::PerturbationKind;
  std::size_t n = 0;
  if (kind == PerturbationKind::typos || kind == PerturbationKind::word_split) {
    for (auto [b, e] : standalone_words(s)) n += (e - b >= 4 && !touches_protected(b, e, prot)) ? 1 : 0;
  } else if (kind == PerturbationKind::drop_stopwords) {
    static const auto kStop = stopword_list();
    for (auto [b, e] : standalone_words(s)) {
      if (touches_protected(b, e, prot)) continue;
      std::string lower;
      for (std::size_t i = b; i < e; ++i) lower.push_back(static_cast<char>(std::tolower(s[i])));
      if (std::find(kStop.begin(), kStop.end(), lower) == kStop.end()) continue;
      std::size_t tb = b;
      while (tb > 0 && !ws(s[tb - 1])) --tb;
      std::size_t te = e;
      while (te < s.size() && !ws(s[te])) ++te;
      bool alone = true;
      for (std::size_t i = tb; i < te; ++i) {
        if ((i < b || i >= e) && !boundary_byte(s[i])) alone = false;
      }
      n += alone ? 1 : 0;
    }
  } else if (kind == PerturbationKind::sequence_spaces) {
    for (auto [b, len] : space_gaps(s)) n += (len <= run_len && !touches_protected(b, b + len, prot)) ? 1 : 0;
  } else if (kind == PerturbationKind::word_merge) {
    for (auto [b, len] : space_gaps(s)) {
      n += (alpha(s[b - 1]) && alpha(s[b + len]) && !touches_protected(b, b + len, prot)) ? 1 : 0;
    }
  }
  return n;
}

// Checks every protected span of the input reappears verbatim in the output
// at the offset implied by the single-step edit log.
inline bool protected_bytes_kept(std::string_view in, std::string_view out,
                                 const std::vector<robustmc::ProtectedSpan>& prot,
                                 const std::vector<robustmc::Edit>& edits) {
  for (const auto& p : prot) {
    long long shift = 0;
    for (const auto& e : edits) {
      const auto b = e.source.begin;
      const auto en = e.source.end;
      if (en <= p.span.begin) {
        shift += static_cast<long long>(e.replacement.size()) - static_cast<long long>(en - b);
      } else if (b >= p.span.end) {
        continue;
      } else if (b == en && (b == p.span.begin)) {
        shift += static_cast<long long>(e.replacement.size());
      } else {
        return false;
      }
    }
    const auto at = static_cast<long long>(p.span.begin) + shift;
    if (at < 0 || static_cast<std::size_t>(at) + p.span.size() > out.size()) return false;
    if (out.substr(static_cast<std::size_t>(at), p.span.size()) != in.substr(p.span.begin, p.span.size())) {
      return false;
    }
  }
  return true;
}

// Output-coordinate spans written by one step's sorted edits.
inline std::vector<std::pair<std::size_t, std::size_t>> written_by(const std::vector<robustmc::Edit>& edits) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  long long shift = 0;
  for (const auto& e : edits) {
    const auto b = static_cast<std::size_t>(static_cast<long long>(e.source.begin) + shift);
    if (!e.replacement.empty()) out.emplace_back(b, b + e.replacement.size());
    shift += static_cast<long long>(e.replacement.size()) - static_cast<long long>(e.source.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Statistics oracles

inline std::vector<double> oracle_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0;
    double equal = 0;
    for (double v : x) {
      if (v < x[i]) less += 1;
      if (v == x[i]) equal += 1;
    }
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

inline std::optional<double> oracle_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0;
  double mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0;
  double saa = 0;
  double sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

inline std::optional<double> oracle_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return oracle_pearson(oracle_ranks(x), oracle_ranks(y));
}

struct OracleComponents {
  double v_data;
  double v_brittleness;
  double v_total;
};

inline OracleComponents oracle_decompose(const std::vector<std::vector<double>>& y) {
  const auto n = static_cast<double>(y.size());
  const auto m = static_cast<double>(y[0].size());
  std::vector<double> row_mean;
  double grand = 0;
  for (const auto& row : y) {
    double s = 0;
    for (double v : row) s += v;
    row_mean.push_back(s / m);
    grand += s;
  }
  grand /= n * m;
  OracleComponents c{0, 0, 0};
  for (std::size_t i = 0; i < y.size(); ++i) {
    c.v_data += (row_mean[i] - grand) * (row_mean[i] - grand) / n;
    double within = 0;
    for (double v : y[i]) {
      within += (v - row_mean[i]) * (v - row_mean[i]) / m;
      c.v_total += (v - grand) * (v - grand) / (n * m);
    }
    c.v_brittleness += within / n;
  }
  return c;
}

// Quadratic-weight kappa from the confusion matrix.
inline double oracle_weighted_kappa(const std::vector<int>& a, const std::vector<int>& b, int k) {
  const auto n = static_cast<double>(a.size());
  std::vector<std::vector<double>> obs(k, std::vector<double>(k, 0));
  std::vector<double> ra(k, 0);
  std::vector<double> rb(k, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    obs[a[i] - 1][b[i] - 1] += 1 / n;
    ra[a[i] - 1] += 1 / n;
    rb[b[i] - 1] += 1 / n;
  }
  double num = 0;
  double den = 0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const double w = static_cast<double>((i - j) * (i - j)) / ((k - 1) * (k - 1));
      num += w * obs[i][j];
      den += w * ra[i] * rb[j];
    }
  }
  return 1 - num / den;
}

// Ordinal alpha from the coincidence matrix, enumerating ordered value pairs
// within each unit.
inline std::optional<double> oracle_alpha_ordinal(const std::vector<std::vector<std::optional<int>>>& table,
                                                  int k) {
  std::vector<std::vector<double>> o(k + 1, std::vector<double>(k + 1, 0));
  for (const auto& unit : table) {
    std::vector<int> vals;
    for (const auto& v : unit) {
      if (v) vals.push_back(*v);
    }
    if (vals.size() < 2) continue;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      for (std::size_t j = 0; j < vals.size(); ++j) {
        if (i != j) o[vals[i]][vals[j]] += 1.0 / static_cast<double>(vals.size() - 1);
      }
    }
  }
  std::vector<double> nc(k + 1, 0);
  double n = 0;
  for (int c = 1; c <= k; ++c) {
    for (int d = 1; d <= k; ++d) nc[c] += o[c][d];
    n += nc[c];
  }
  auto delta2 = [&](int c, int d) {
    if (c > d) std::swap(c, d);
    double s = 0;
    for (int g = c; g <= d; ++g) s += nc[g];
    s -= (nc[c] + nc[d]) / 2;
    return s * s;
  };
  double d_o = 0;
  double d_e = 0;
  for (int c = 1; c <= k; ++c) {
    for (int d = 1; d <= k; ++d) {
      d_o += o[c][d] * delta2(c, d);
      d_e += nc[c] * nc[d] * delta2(c, d);
    }
  }
  d_o /= n;
  d_e /= n * (n - 1);
  if (d_e == 0) return std::nullopt;
  return 1 - d_o / d_e;
}

}  // namespace testsupport
