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
#include <vector>

#include "slse/cohort.hpp"
#include "slse/eval.hpp"
#include "slse/synth.hpp"
#include "test_util.hpp"

namespace slse {
namespace {

using cohort::DeriveLabels;

TEST(LabelsTest, ThresholdBoundaries) {
  EXPECT_EQ(DeriveLabels(45.0, 55.0).rhf, 1);
  EXPECT_EQ(DeriveLabels(45.01, 55.0).rhf, 0);
  EXPECT_EQ(DeriveLabels(30.0, 55.0).rhf, 1);
  EXPECT_EQ(DeriveLabels(60.0, 49.9).lhf, 1);
  EXPECT_EQ(DeriveLabels(60.0, 50.0).lhf, 0);
  cohort::LabelRule strict;
  strict.rvef_inclusive = false;
  EXPECT_EQ(DeriveLabels(45.0, 55.0, strict).rhf, 0);
  EXPECT_THROW(DeriveLabels(0.0, 50.0), Error);
  EXPECT_THROW(DeriveLabels(101.0, 50.0), Error);
}

TEST(DemographicsTest, FeatureLayout) {
  cohort::DemographicVector d;
  d.age = 63;
  d.sex = 1;
  d.copd = 1;
  d.ckd = 1;
  EXPECT_EQ(cohort::DemographicFeatures(d, false), (std::vector<double>{63, 1, 0, 1}));
  const auto ext = cohort::DemographicFeatures(d, true);
  ASSERT_EQ(ext.size(), 4 + cohort::ExtendedFlagNames().size());
  EXPECT_EQ(ext[4 + 3], 1.0);  // ckd
  d.age = 12;
  EXPECT_THROW(d.Validate(), Error);
}

TEST(PreprocessTest, KeepsEarliestAcceptedBlow) {
  auto to_raw = [](const spiro::VolumeTimeSeries& v) {
    cohort::RawBlow b{v.subject_id, 10.0, {}};
    for (double x : v.samples) b.samples_ml.push_back(x * 1000);
    return b;
  };
  const auto first = testing::ParametricBlow(600, 4.0, 8.0, 10, 1.5, "A");
  const auto good1 = to_raw(first);
  const auto good2 = to_raw(testing::ParametricBlow(600, 3.0, 6.0, 10, 1.5, "A"));
  cohort::RawBlow tiny{"A", 10.0, std::vector<double>(100, 5.0)};
  cohort::RawBlow other{"B", 10.0, {0, 10, 20}};
  const auto pre = cohort::Preprocess({tiny, good1, good2, other});
  ASSERT_EQ(pre.curves.size(), 1u);
  EXPECT_EQ(pre.curves[0].subject_id, "A");
  EXPECT_NEAR(pre.curves[0].volume[599], first.samples[599], 1e-12);
  ASSERT_EQ(pre.rejected.size(), 2u);
  EXPECT_EQ(pre.rejected[0].second, spiro::RejectReason::kTooSmall);
}

TEST(JoinTest, DropsSubjectsWithoutRvef) {
  const auto c = testing::ParametricCurve(500, 4.0, 8.0, 1.5, "A");
  auto c2 = c;
  c2.subject_id = "B";
  std::vector<cohort::CohortRow> rows = {{"A", {}, 40.0, 55.0}, {"B", {}, std::nullopt, 55.0},
                                         {"C", {}, 60.0, 55.0}};
  const auto recs = cohort::JoinRecords(rows, {c, c2});
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].subject_id(), "A");
  EXPECT_EQ(recs[0].label_rhf, 1);
}

synth::CohortConfig Config(std::size_t n, double lambda, std::uint64_t seed) {
  synth::CohortConfig cfg;
  cfg.n_subjects = n;
  cfg.effect_size = lambda;
  cfg.seed = seed;
  return cfg;
}

TEST(SynthTest, DeterministicForSeed) {
  const auto a = synth::GenerateCohort(Config(200, 1.0, 3));
  const auto b = synth::GenerateCohort(Config(200, 1.0, 3));
  EXPECT_EQ(cohort::BlowsToCsv(a.blows), cohort::BlowsToCsv(b.blows));
  EXPECT_EQ(cohort::CohortToCsv(a.rows), cohort::CohortToCsv(b.rows));
  const auto c = synth::GenerateCohort(Config(200, 1.0, 4));
  EXPECT_NE(cohort::BlowsToCsv(a.blows), cohort::BlowsToCsv(c.blows));
}

TEST(SynthTest, BlowsAreValidMonotoneAndBoundedByFvc) {
  const auto c = synth::GenerateCohort(Config(500, 1.0, 5));
  const auto pre = cohort::Preprocess(c.blows);
  EXPECT_TRUE(pre.rejected.empty());
  EXPECT_EQ(pre.curves.size(), 500u);
  for (std::size_t i = 0; i < c.blows.size(); ++i) {
    const auto& s = c.blows[i].samples_ml;
    for (std::size_t k = 1; k < s.size(); ++k) ASSERT_GE(s[k], s[k - 1]);
    EXPECT_LE(s.back(), c.fvc[i] * 1000 + 5e-4);  // samples are rounded to 1e-3 ml
    c.rows[i].demo.Validate();
  }
}

TEST(SynthTest, PositiveRateAndSignal) {
  const auto c = synth::GenerateCohort(Config(2000, 1.0, 6));
  const auto recs = synth::ToRecords(c);
  ASSERT_EQ(recs.size(), 2000u);
  std::vector<double> pos_fef50, neg_fef50, pos_pef, neg_pef;
  std::size_t positives = 0;
  for (const auto& r : recs) {
    positives += r.label_rhf;
    const auto f = spiro::DeriveFeatures(r.curve);
    (r.label_rhf ? pos_fef50 : neg_fef50).push_back(f.fef50 / f.pef);
  }
  EXPECT_NEAR(positives / 2000.0, 0.2, 0.02);
  EXPECT_LT(eval::RankSumPValue(pos_fef50, neg_fef50), 1e-6);
  EXPECT_GE(c.baseline_rvef, synth::kMinBaselineRvef);
  EXPECT_LE(c.baseline_rvef, synth::kMaxBaselineRvef);
}

TEST(SynthTest, RejectsInvalidConfig) {
  auto cfg = Config(5, 1.0, 1);
  EXPECT_THROW(synth::GenerateCohort(cfg), Error);
  cfg = Config(100, 1.5, 1);
  EXPECT_THROW(synth::GenerateCohort(cfg), Error);
  cfg = Config(100, 1.0, 1);
  cfg.positive_rate = 1.0;
  EXPECT_THROW(synth::GenerateCohort(cfg), Error);
}

TEST(CsvTest, BlowsRoundTrip) {
  const auto c = synth::GenerateCohort(Config(30, 1.0, 7));
  const std::string text = cohort::BlowsToCsv(c.blows);
  const auto back = cohort::BlowsFromCsv(text);
  ASSERT_EQ(back.size(), c.blows.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].subject_id, c.blows[i].subject_id);
    EXPECT_EQ(back[i].samples_ml, c.blows[i].samples_ml);
  }
  EXPECT_EQ(cohort::BlowsToCsv(back), text);
}

TEST(CsvTest, CurvesRoundTripExactly) {
  const auto pre = cohort::Preprocess(synth::GenerateCohort(Config(20, 1.0, 8)).blows);
  const auto back = cohort::CurvesFromCsv(cohort::CurvesToCsv(pre.curves));
  ASSERT_EQ(back.size(), pre.curves.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(back[i], pre.curves[i]);
}

TEST(CsvTest, CohortRoundTrip) {
  const auto c = synth::GenerateCohort(Config(40, 1.0, 9));
  const std::string text = cohort::CohortToCsv(c.rows);
  const auto back = cohort::CohortFromCsv(text);
  ASSERT_EQ(back.size(), c.rows.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].subject_id, c.rows[i].subject_id);
    EXPECT_EQ(back[i].demo, c.rows[i].demo);
  }
  EXPECT_EQ(cohort::CohortToCsv(back), text);
}

TEST(CsvTest, MalformedInputIsAnError) {
  EXPECT_THROW(cohort::BlowsFromCsv("wrong,header\n"), Error);
  EXPECT_THROW(cohort::CohortFromCsv("subject_id\nA\n"), Error);
}

TEST(CsvTest, EmbeddingsHeader) {
  EXPECT_EQ(cohort::EmbeddingsToCsv({"A"}, {{0.5, -1}}), "subject_id,e0,e1\nA,0.5,-1\n");
}

}  // namespace
}  // namespace slse
