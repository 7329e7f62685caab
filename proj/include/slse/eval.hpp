/*
 * Copyright 2026 The SLSE Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Discrimination metrics and the statistics behind subgroup reports and
// the cohort characteristics table.

#ifndef SLSE_EVAL_HPP_
#define SLSE_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "json.hpp"
#include "slse/common.hpp"

namespace slse::eval {

// Midranks (1-based) of `values`; tied values share the mean of their ranks.
inline std::vector<double> MidRanks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
    i = j + 1;
  }
  return ranks;
}

// Area under the ROC curve as the Mann-Whitney U statistic normalized by
// n_pos * n_neg, ties counted as one half. O(n log n).
inline double Auroc(std::span<const double> scores, std::span<const int> labels) {
  Require(scores.size() == labels.size(), ErrorCode::kShape,
          "scores and labels differ in length");
  std::size_t n_pos = 0;
  for (int l : labels) {
    Require(l == 0 || l == 1, ErrorCode::kValidation, "labels must be 0/1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  Require(n_pos > 0 && n_neg > 0, ErrorCode::kValidation,
          "AUROC needs both classes present");
  const std::vector<double> ranks = MidRanks(scores);
  // Doubled midranks are integers, so the rank sum is exact.
  double doubled_sum = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (labels[i] == 1) doubled_sum += 2.0 * ranks[i];
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  const double doubled_u = doubled_sum - np * (np + 1.0);
  return doubled_u / (2.0 * np * nn);
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

inline double NormalTwoSidedP(double z) { return std::erfc(std::fabs(z) / std::sqrt(2.0)); }

// Groups at least this large (both of them) use the normal approximation.
inline constexpr std::size_t kRankSumNormalMinGroup = 20;
// Above this pooled size the exact null distribution is not enumerated.
inline constexpr std::size_t kRankSumExactMaxTotal = 200;

namespace internal {

// Exact permutation null of the doubled rank sum of group a, via dynamic
// programming over "how many items chosen, which doubled sum".
inline double ExactRankSumP(const std::vector<long long>& doubled_ranks, std::size_t n1,
                            long long observed) {
  const std::size_t n = doubled_ranks.size();
  long long max_sum = 0;
  for (long long r : doubled_ranks) max_sum += r;
  const auto width = static_cast<std::size_t>(max_sum + 1);
  std::vector<std::vector<double>> ways(n1 + 1, std::vector<double>(width, 0.0));
  ways[0][0] = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(doubled_ranks[i]);
    for (std::size_t k = std::min(n1, i + 1); k >= 1; --k) {
      auto& dst = ways[k];
      const auto& src = ways[k - 1];
      for (std::size_t s = width; s-- > r;) dst[s] += src[s - r];
    }
  }
  double total = 0;
  for (double w : ways[n1]) total += w;
  const double expected = static_cast<double>(n1) * static_cast<double>(max_sum) /
                          static_cast<double>(n);
  const double obs_dev = std::fabs(static_cast<double>(observed) - expected);
  double tail = 0;
  for (std::size_t s = 0; s < width; ++s) {
    if (std::fabs(static_cast<double>(s) - expected) >= obs_dev - 1e-9) tail += ways[n1][s];
  }
  return std::min(1.0, tail / total);
}

}  // namespace internal

// Two-sided Wilcoxon rank-sum (Mann-Whitney) test. Normal approximation
// with tie correction and continuity correction when both groups have at
// least kRankSumNormalMinGroup members (or the pooled size is too large to
// enumerate); exact permutation distribution otherwise.
inline double RankSumPValue(std::span<const double> a, std::span<const double> b) {
  Require(!a.empty() && !b.empty(), ErrorCode::kValidation,
          "rank-sum test needs two non-empty samples");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::vector<double> ranks = MidRanks(pooled);
  const std::size_t n1 = a.size(), n2 = b.size(), n = n1 + n2;
  if (std::min(n1, n2) < kRankSumNormalMinGroup && n <= kRankSumExactMaxTotal) {
    std::vector<long long> doubled(n);
    long long observed = 0;
    for (std::size_t i = 0; i < n; ++i) {
      doubled[i] = std::llround(2.0 * ranks[i]);
      if (i < n1) observed += doubled[i];
    }
    return internal::ExactRankSumP(doubled, n1, observed);
  }
  double r1 = 0;
  for (std::size_t i = 0; i < n1; ++i) r1 += ranks[i];
  const double dn1 = static_cast<double>(n1), dn2 = static_cast<double>(n2),
               dn = static_cast<double>(n);
  const double u = r1 - dn1 * (dn1 + 1.0) / 2.0;
  const double mu = dn1 * dn2 / 2.0;
  // Tie correction: sum over tie groups of (t^3 - t).
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double var = dn1 * dn2 / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  if (var <= 0) return 1.0;
  const double z = std::max(0.0, std::fabs(u - mu) - 0.5) / std::sqrt(var);
  return NormalTwoSidedP(z);
}

struct MeanSd {
  double mean = 0;
  double sd = 0;  // sample standard deviation (n - 1)
  std::size_t n = 0;
};

inline MeanSd ComputeMeanSd(std::span<const double> v) {
  MeanSd out;
  out.n = v.size();
  if (v.empty()) return out;
  out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return out;
}

// Welch's unequal-variance t-test, two-sided. Absent when the statistic is
// undefined (a group with fewer than two members, or both variances zero).
inline std::optional<double> WelchTTestP(std::span<const double> a,
                                         std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) return std::nullopt;
  const MeanSd ma = ComputeMeanSd(a), mb = ComputeMeanSd(b);
  const double va = ma.sd * ma.sd / static_cast<double>(ma.n);
  const double vb = mb.sd * mb.sd / static_cast<double>(mb.n);
  if (va + vb <= 0) return std::nullopt;
  const double t = (ma.mean - mb.mean) / std::sqrt(va + vb);
  const double df = (va + vb) * (va + vb) /
                    (va * va / static_cast<double>(ma.n - 1) +
                     vb * vb / static_cast<double>(mb.n - 1));
  if (t == 0.0) return 1.0;
  const boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
}

// Pearson chi-square on a 2x2 table without continuity correction.
// Absent when a margin is zero.
inline std::optional<double> ChiSquare2x2P(double a, double b, double c, double d) {
  const double n = a + b + c + d;
  const double r1 = a + b, r2 = c + d, c1 = a + c, c2 = b + d;
  if (r1 <= 0 || r2 <= 0 || c1 <= 0 || c2 <= 0) return std::nullopt;
  const double observed[4] = {a, b, c, d};
  const double expected[4] = {r1 * c1 / n, r1 * c2 / n, r2 * c1 / n, r2 * c2 / n};
  double stat = 0;
  for (int i = 0; i < 4; ++i) {
    stat += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
  }
  // Survival function of chi-square with one degree of freedom.
  return std::erfc(std::sqrt(stat / 2.0));
}

// ---------------------------------------------------------------------------
// Subgroup analysis
// ---------------------------------------------------------------------------

// Linear-interpolation quantile of sorted data.
inline double Quantile(const std::vector<double>& sorted, double q) {
  if (sorted.size() == 1) return sorted[0];
  const double pos = q * static_cast<double>(sorted.size() - 1);
  return InterpolateAt(sorted, pos);
}

struct ProbabilitySummary {
  double median = 0, q1 = 0, q3 = 0, min = 0, max = 0;
};

inline ProbabilitySummary Summarize(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return {Quantile(values, 0.5), Quantile(values, 0.25), Quantile(values, 0.75),
          values.front(), values.back()};
}

struct SubgroupDefinition {
  std::string name;       // e.g. "sex=1"
  std::string partition;  // subgroups sharing a partition cover each subject once
  std::vector<char> members;
};

struct SubgroupResult {
  std::string name;
  std::string partition;
  std::size_t n = 0;
  std::size_t n_positive = 0;
  std::optional<double> auroc;  // absent unless both classes are present
  std::optional<ProbabilitySummary> summary;
  std::optional<double> p_value;  // rank-sum vs complement
};

struct EvalReport {
  double overall_auroc = 0;
  std::size_t n = 0;
  std::size_t n_positive = 0;
  std::vector<SubgroupResult> subgroups;
  nlohmann::json metadata = nlohmann::json::object();

  nlohmann::json ToJson() const {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& s : subgroups) {
      nlohmann::json g = {{"name", s.name},
                          {"partition", s.partition},
                          {"n", s.n},
                          {"n_positive", s.n_positive},
                          {"auroc", nullptr},
                          {"p_value", nullptr},
                          {"probability", nullptr}};
      if (s.auroc) g["auroc"] = *s.auroc;
      if (s.p_value) g["p_value"] = *s.p_value;
      if (s.summary) {
        g["probability"] = {{"median", s.summary->median}, {"q1", s.summary->q1},
                            {"q3", s.summary->q3},         {"min", s.summary->min},
                            {"max", s.summary->max}};
      }
      groups.push_back(g);
    }
    return {{"overall_auroc", overall_auroc}, {"n", n},
            {"n_positive", n_positive},       {"subgroups", groups},
            {"metadata", metadata}};
  }

  std::string ToCsv() const {
    auto opt = [](const std::optional<double>& v) {
      return v ? FormatDouble(*v) : std::string();
    };
    std::string out =
        "subgroup,partition,n,n_positive,auroc,p_value,median,q1,q3,min,max\n";
    out += "overall,all," + std::to_string(n) + "," + std::to_string(n_positive) + "," +
           FormatDouble(overall_auroc) + ",,,,,,\n";
    for (const auto& s : subgroups) {
      out += s.name + "," + s.partition + "," + std::to_string(s.n) + "," +
             std::to_string(s.n_positive) + "," + opt(s.auroc) + "," + opt(s.p_value);
      if (s.summary) {
        out += "," + FormatDouble(s.summary->median) + "," + FormatDouble(s.summary->q1) +
               "," + FormatDouble(s.summary->q3) + "," + FormatDouble(s.summary->min) +
               "," + FormatDouble(s.summary->max);
      } else {
        out += ",,,,,";
      }
      out += "\n";
    }
    return out;
  }
};

inline EvalReport SubgroupAnalysis(std::span<const double> scores,
                                   std::span<const int> labels,
                                   const std::vector<SubgroupDefinition>& groups) {
  EvalReport report;
  report.overall_auroc = Auroc(scores, labels);
  report.n = labels.size();
  for (int l : labels) report.n_positive += static_cast<std::size_t>(l);
  for (const SubgroupDefinition& def : groups) {
    Require(def.members.size() == scores.size(), ErrorCode::kShape,
            "subgroup membership length mismatch for " + def.name);
    SubgroupResult r;
    r.name = def.name;
    r.partition = def.partition;
    std::vector<double> in_scores, out_scores;
    std::vector<int> in_labels;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (def.members[i]) {
        in_scores.push_back(scores[i]);
        in_labels.push_back(labels[i]);
      } else {
        out_scores.push_back(scores[i]);
      }
    }
    r.n = in_scores.size();
    for (int l : in_labels) r.n_positive += static_cast<std::size_t>(l);
    if (r.n > 0) r.summary = Summarize(in_scores);
    if (r.n_positive > 0 && r.n_positive < r.n) r.auroc = Auroc(in_scores, in_labels);
    if (!in_scores.empty() && !out_scores.empty()) {
      r.p_value = RankSumPValue(in_scores, out_scores);
    }
    report.subgroups.push_back(std::move(r));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Characteristics table
// ---------------------------------------------------------------------------

struct ContinuousColumn {
  std::string name;
  std::vector<double> values;
};

struct BinaryColumn {
  std::string name;
  std::vector<int> values;
};

struct CharacteristicRow {
  std::string name;
  bool continuous = false;
  // Continuous rows: mean/sd; binary rows: count/percent.
  double overall_a = 0, overall_b = 0;
  double group1_a = 0, group1_b = 0;  // group label 1 (e.g. RHF)
  double group0_a = 0, group0_b = 0;
  std::optional<double> p_value;
};

struct CharacteristicsTable {
  std::size_t n_overall = 0, n_group1 = 0, n_group0 = 0;
  std::vector<CharacteristicRow> rows;

  std::string ToCsv(const std::string& group1_name = "RHF",
                    const std::string& group0_name = "Non-RHF") const {
    auto cell = [](const CharacteristicRow& r, double a, double b) {
      char buf[96];
      if (r.continuous) {
        std::snprintf(buf, sizeof(buf), "%.2f +/- %.2f", a, b);
      } else {
        std::snprintf(buf, sizeof(buf), "%.0f (%.1f%%)", a, b);
      }
      return std::string(buf);
    };
    std::string out = "characteristic,overall (n=" + std::to_string(n_overall) + ")," +
                      group1_name + " (n=" + std::to_string(n_group1) + ")," + group0_name +
                      " (n=" + std::to_string(n_group0) + "),p_value\n";
    for (const auto& r : rows) {
      out += r.name + "," + cell(r, r.overall_a, r.overall_b) + "," +
             cell(r, r.group1_a, r.group1_b) + "," + cell(r, r.group0_a, r.group0_b) + "," +
             (r.p_value ? FormatDouble(*r.p_value) : std::string()) + "\n";
    }
    return out;
  }
};

inline CharacteristicsTable BuildCharacteristicsTable(
    std::span<const int> group, const std::vector<ContinuousColumn>& continuous,
    const std::vector<BinaryColumn>& binary) {
  CharacteristicsTable table;
  table.n_overall = group.size();
  for (int g : group) {
    Require(g == 0 || g == 1, ErrorCode::kValidation, "group labels must be 0/1");
    (g ? table.n_group1 : table.n_group0)++;
  }
  Require(table.n_group1 > 0 && table.n_group0 > 0, ErrorCode::kValidation,
          "characteristics table needs two non-empty groups");
  for (const ContinuousColumn& col : continuous) {
    Require(col.values.size() == group.size(), ErrorCode::kShape, "column length mismatch");
    std::vector<double> g1, g0;
    for (std::size_t i = 0; i < group.size(); ++i) (group[i] ? g1 : g0).push_back(col.values[i]);
    CharacteristicRow r;
    r.name = col.name;
    r.continuous = true;
    const MeanSd all = ComputeMeanSd(col.values), s1 = ComputeMeanSd(g1), s0 = ComputeMeanSd(g0);
    r.overall_a = all.mean;
    r.overall_b = all.sd;
    r.group1_a = s1.mean;
    r.group1_b = s1.sd;
    r.group0_a = s0.mean;
    r.group0_b = s0.sd;
    r.p_value = WelchTTestP(g1, g0);
    table.rows.push_back(r);
  }
  for (const BinaryColumn& col : binary) {
    Require(col.values.size() == group.size(), ErrorCode::kShape, "column length mismatch");
    double c1 = 0, c0 = 0;
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (col.values[i]) (group[i] ? c1 : c0) += 1;
    }
    CharacteristicRow r;
    r.name = col.name;
    const double n1 = static_cast<double>(table.n_group1), n0 = static_cast<double>(table.n_group0);
    r.overall_a = c1 + c0;
    r.overall_b = 100.0 * (c1 + c0) / (n1 + n0);
    r.group1_a = c1;
    r.group1_b = 100.0 * c1 / n1;
    r.group0_a = c0;
    r.group0_b = 100.0 * c0 / n0;
    r.p_value = ChiSquare2x2P(c1, n1 - c1, c0, n0 - c0);
    table.rows.push_back(r);
  }
  return table;
}

}  // namespace slse::eval

#endif  // SLSE_EVAL_HPP_
