// Copyright 2026 The SLSE Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "slse/eval.hpp"
#include "slse/gbdt.hpp"
#include "test_util.hpp"

namespace slse::gbdt {
namespace {

struct Data {
  FeatureMatrix x;
  std::vector<int> y;
};

// y = 1 when x0 + 0.5 x1 + noise > 0; remaining columns are noise.
Data Synthetic(std::size_t n, std::size_t cols, double noise, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> d(0, 1);
  std::vector<std::vector<double>> rows(n, std::vector<double>(cols));
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : rows[i]) v = d(rng);
    y[i] = rows[i][0] + 0.5 * rows[i][1] + noise * d(rng) > 0 ? 1 : 0;
  }
  return {FeatureMatrix::FromRows(rows), y};
}

std::vector<double> Scores(const GbdtModel& m, const FeatureMatrix& x) {
  std::vector<double> s(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) s[r] = m.PredictProba(x.row(r));
  return s;
}

TEST(FitTest, SeparableDataReachesPerfectAuroc) {
  const Data d = Synthetic(300, 3, 0.0, 1);
  GbdtParams p;
  p.n_trees = 200;
  const auto m = Fit(d.x, d.y, p);
  EXPECT_DOUBLE_EQ(eval::Auroc(Scores(m, d.x), d.y), 1.0);
  for (const auto& t : m.trees) EXPECT_LE(t.MaxDepth(), 3);
}

TEST(FitTest, ZeroTreesPredictPrevalence) {
  Data d = Synthetic(200, 2, 1.0, 2);
  GbdtParams p;
  p.n_trees = 0;
  const auto m = Fit(d.x, d.y, p);
  double prevalence = 0;
  for (int v : d.y) prevalence += v;
  prevalence /= d.y.size();
  for (std::size_t r = 0; r < d.x.rows; ++r) EXPECT_NEAR(m.PredictProba(d.x.row(r)), prevalence, 1e-12);
}

TEST(FitTest, ConstantFeaturesGiveBaseOnly) {
  FeatureMatrix x(50, 2);
  for (double& v : x.values) v = 3.0;
  std::vector<int> y(50, 0);
  for (int i = 0; i < 10; ++i) y[i] = 1;
  const auto m = Fit(x, y, GbdtParams{});
  EXPECT_TRUE(m.trees.empty());
  EXPECT_NEAR(m.PredictProba(x.row(0)), 0.2, 1e-12);
}

TEST(FitTest, RejectsBadInput) {
  Data d = Synthetic(20, 2, 1.0, 3);
  std::vector<int> single(20, 1);
  EXPECT_THROW(Fit(d.x, single, GbdtParams{}), Error);
  std::vector<int> wrong(19, 0);
  EXPECT_THROW(Fit(d.x, wrong, GbdtParams{}), Error);
  GbdtParams bad;
  bad.subsample = 0;
  EXPECT_THROW(Fit(d.x, d.y, bad), Error);
  d.x.values[0] = NAN;
  EXPECT_THROW(Fit(d.x, d.y, GbdtParams{}), Error);
}

TEST(FitTest, DefaultFeatureNamesAndShapeCheck) {
  const Data d = Synthetic(60, 3, 0.5, 4);
  GbdtParams p;
  p.n_trees = 5;
  const auto m = Fit(d.x, d.y, p);
  EXPECT_EQ(m.feature_names, (std::vector<std::string>{"f0", "f1", "f2"}));
  EXPECT_THROW(m.RawScore(std::vector<double>{1, 2}), Error);
}

TEST(FitTest, SubsampleIsSeedDeterministic) {
  const Data d = Synthetic(200, 4, 0.7, 5);
  GbdtParams p;
  p.n_trees = 20;
  p.subsample = 0.8;
  p.seed = 9;
  EXPECT_EQ(ModelToJson(Fit(d.x, d.y, p)), ModelToJson(Fit(d.x, d.y, p)));
  GbdtParams q = p;
  q.seed = 10;
  EXPECT_NE(ModelToJson(Fit(d.x, d.y, p)), ModelToJson(Fit(d.x, d.y, q)));
}

TEST(DecisionTreeTest, WalkMatchesHandBuiltTree) {
  DecisionTree t;
  t.nodes = {{0, 0.5, 1, 2, 0, 10}, {1, 2.0, 3, 4, 0, 6}, {-1, 0, -1, -1, 3.0, 4},
             {-1, 0, -1, -1, -1.0, 2}, {-1, 0, -1, -1, 1.0, 4}};
  EXPECT_EQ(t.Predict(std::vector<double>{0.1, 1.0}), -1.0);
  EXPECT_EQ(t.Predict(std::vector<double>{0.1, 2.0}), 1.0);  // equality goes right
  EXPECT_EQ(t.Predict(std::vector<double>{0.5, 0.0}), 3.0);
  EXPECT_EQ(t.MaxDepth(), 2);
  EXPECT_DOUBLE_EQ(t.ExpectedValue(), (2 * -1.0 + 4 * 1.0 + 4 * 3.0) / 10);
}

// Path-dependent conditional expectation of one tree given the features in
// `mask`: known features follow x, unknown ones average by cover.
double Conditional(const DecisionTree& t, std::span<const double> x, unsigned mask, int node = 0) {
  const TreeNode& n = t.nodes[node];
  if (n.is_leaf()) return n.value;
  if (mask & (1u << n.feature)) {
    return Conditional(t, x, mask, x[n.feature] < n.threshold ? n.left : n.right);
  }
  const double l = t.nodes[n.left].cover, r = t.nodes[n.right].cover;
  return (l * Conditional(t, x, mask, n.left) + r * Conditional(t, x, mask, n.right)) / (l + r);
}

// Exact Shapley values by enumerating all 2^M coalitions.
std::vector<double> BruteForceShap(const GbdtModel& m, std::span<const double> x) {
  const std::size_t M = m.num_features();
  std::vector<double> fact(M + 1, 1.0);
  for (std::size_t i = 1; i <= M; ++i) fact[i] = fact[i - 1] * i;
  auto value = [&](unsigned mask) {
    double s = 0;
    for (const auto& t : m.trees) s += Conditional(t, x, mask);
    return m.shrinkage * s;
  };
  std::vector<double> phi(M, 0.0);
  for (unsigned mask = 0; mask < (1u << M); ++mask) {
    const double v = value(mask);
    const auto size = static_cast<std::size_t>(__builtin_popcount(mask));
    for (std::size_t i = 0; i < M; ++i) {
      if (mask & (1u << i)) continue;
      const double w = fact[size] * fact[M - size - 1] / fact[M];
      phi[i] += w * (value(mask | (1u << i)) - v);
    }
  }
  return phi;
}

TEST(TreeShapTest, MatchesBruteForceOracle) {
  const Data d = Synthetic(400, 8, 0.8, 6);
  GbdtParams p;
  p.n_trees = 15;
  p.max_depth = 4;
  const auto m = Fit(d.x, d.y, p);
  for (std::size_t r = 0; r < 5; ++r) {
    const auto x = d.x.row(r);
    const auto a = TreeShap(m, x);
    const auto oracle = BruteForceShap(m, x);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(a.phi[i], oracle[i], 1e-9) << i;
  }
}

TEST(TreeShapTest, LocalAccuracy) {
  const Data d = Synthetic(300, 5, 0.5, 7);
  const auto m = Fit(d.x, d.y, GbdtParams{});
  for (std::size_t r = 0; r < 20; ++r) {
    const auto a = TreeShap(m, d.x.row(r));
    EXPECT_NEAR(a.Total(), m.RawScore(d.x.row(r)), 1e-9);
  }
}

TEST(TreeShapTest, UnusedFeatureGetsZero) {
  Data d = Synthetic(200, 3, 0.5, 8);
  for (std::size_t r = 0; r < d.x.rows; ++r) d.x.at(r, 2) = 1.0;
  const auto m = Fit(d.x, d.y, GbdtParams{});
  for (std::size_t r = 0; r < 10; ++r) EXPECT_EQ(TreeShap(m, d.x.row(r)).phi[2], 0.0);
}

TEST(TreeShapTest, BaseValueIsCoverWeightedMean) {
  const Data d = Synthetic(200, 3, 0.5, 9);
  const auto m = Fit(d.x, d.y, GbdtParams{});
  double mean = 0;
  for (std::size_t r = 0; r < d.x.rows; ++r) mean += m.RawScore(d.x.row(r)) / d.x.rows;
  // Without subsampling every node cover is the training count, so phi_0 is
  // the training mean of the raw score.
  EXPECT_NEAR(TreeShap(m, d.x.row(0)).base_value, mean, 1e-9);
}

TEST(SerializationTest, JsonRoundTripIsExact) {
  const Data d = Synthetic(200, 4, 0.5, 10);
  const auto m = Fit(d.x, d.y, GbdtParams{}, {"a", "b", "c", "d"});
  const auto j = ModelToJson(m);
  const auto copy = ModelFromJson(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(copy.feature_names, m.feature_names);
  for (std::size_t r = 0; r < d.x.rows; ++r) EXPECT_EQ(copy.RawScore(d.x.row(r)), m.RawScore(d.x.row(r)));
  EXPECT_EQ(ModelToJson(copy), j);
}

TEST(SerializationTest, RejectsMalformedModel) {
  const Data d = Synthetic(100, 2, 0.5, 11);
  auto j = ModelToJson(Fit(d.x, d.y, GbdtParams{}));
  j["format"] = "other";
  EXPECT_THROW(ModelFromJson(j), Error);
}

}  // namespace
}  // namespace slse::gbdt
