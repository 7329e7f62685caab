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

#include "slse/spiro.hpp"
#include "test_util.hpp"

namespace slse::spiro {
namespace {

TEST(MlToLitersTest, ConvertsUnits) {
  EXPECT_EQ(MlToLiters(std::vector<double>{0}), std::vector<double>{0.0});
  EXPECT_EQ(MlToLiters(std::vector<double>{1000, 2500}), (std::vector<double>{1.0, 2.5}));
  EXPECT_DOUBLE_EQ(MlToLiters(std::vector<double>{3414})[0], 3.414);
}

TEST(MlToLitersTest, RejectsNegativeAndNonFinite) {
  EXPECT_THROW(MlToLiters(std::vector<double>{-1}), Error);
  EXPECT_THROW(MlToLiters(std::vector<double>{NAN}), Error);
  EXPECT_THROW(MlToLiters(std::vector<double>{INFINITY}), Error);
}

TEST(VolumeToFlowTest, ConstantAndRamp) {
  EXPECT_EQ(VolumeToFlow({"a", {1.0, 1.0, 1.0}, 0.01}), (std::vector<double>{0, 0, 0}));
  const auto ramp = VolumeToFlow({"a", {0.00, 0.01, 0.02}, 0.01});
  for (double f : ramp) EXPECT_NEAR(f, 1.0, 1e-12);
}

TEST(VolumeToFlowTest, TooShortIsAnError) {
  EXPECT_THROW(VolumeToFlow({"a", {1.0}, 0.01}), Error);
}

TEST(VolumeToFlowTest, MatchesForwardDifferenceOracle) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(0, 0.1);
  std::vector<double> v(50);
  for (std::size_t i = 1; i < v.size(); ++i) v[i] = v[i - 1] + u(rng);
  const auto flow = VolumeToFlow({"r", v, 0.02});
  ASSERT_EQ(flow.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t j = i + 1 < v.size() ? i : i - 1;
    EXPECT_EQ(flow[i], (v[j + 1] - v[j]) / 0.02) << i;
  }
}

TEST(VolumeToFlowTest, IsLinear) {
  Rng rng(4);
  const auto a = testing::RandomVector(30, rng), b = testing::RandomVector(30, rng);
  std::vector<double> mix(30);
  for (int i = 0; i < 30; ++i) mix[i] = 2.0 * a[i] - 0.5 * b[i];
  const auto fa = VolumeToFlow({"a", a, 0.01}), fb = VolumeToFlow({"b", b, 0.01});
  const auto fm = VolumeToFlow({"m", mix, 0.01});
  for (int i = 0; i < 30; ++i) EXPECT_NEAR(fm[i], 2.0 * fa[i] - 0.5 * fb[i], 1e-9);
}

TEST(CheckBlowValidityTest, Verdicts) {
  std::vector<double> good(600);
  for (std::size_t i = 0; i < good.size(); ++i) good[i] = 3.0 * i / (good.size() - 1);
  EXPECT_TRUE(CheckBlowValidity({"g", good, 0.01}).accepted());

  std::vector<double> small(100);
  for (std::size_t i = 0; i < small.size(); ++i) small[i] = 0.1 * i / 99.0;
  EXPECT_EQ(CheckBlowValidity({"s", small, 0.01}).reason, RejectReason::kTooSmall);

  std::vector<double> drop = good;
  for (std::size_t i = 300; i < drop.size(); ++i) drop[i] -= 0.2;
  EXPECT_EQ(CheckBlowValidity({"d", drop, 0.01}).reason, RejectReason::kNonMonotone);

  std::vector<double> brief(20);
  for (std::size_t i = 0; i < brief.size(); ++i) brief[i] = 0.1 * i;
  EXPECT_EQ(CheckBlowValidity({"b", brief, 0.01}).reason, RejectReason::kTooShort);
}

TEST(MakeFlowVolumeTest, PadsShortBlows) {
  const auto c = MakeFlowVolume(testing::ParametricBlow(600));
  EXPECT_EQ(c.valid_len, 600u);
  for (std::size_t i = 600; i < kCurveLength; ++i) {
    EXPECT_EQ(c.volume[i], 0.0);
    EXPECT_EQ(c.flow[i], 0.0);
  }
  EXPECT_NO_THROW(c.Validate());
}

TEST(MakeFlowVolumeTest, FullLengthAndTruncation) {
  EXPECT_EQ(MakeFlowVolume(testing::ParametricBlow(1000)).valid_len, 1000u);
  const auto blow = testing::ParametricBlow(1300);
  const auto c = MakeFlowVolume(blow);
  EXPECT_EQ(c.valid_len, 1000u);
  EXPECT_EQ(c.volume[999], blow.samples[999]);
}

TEST(MakeFlowVolumeTest, ComposesVolumeAndFlow) {
  const auto blow = testing::ParametricBlow(700);
  const auto c = MakeFlowVolume(blow);
  const auto flow = VolumeToFlow(blow);
  for (std::size_t i = 0; i < 700; ++i) {
    EXPECT_EQ(c.volume[i], blow.samples[i]);
    EXPECT_EQ(c.flow[i], flow[i]);
  }
  EXPECT_EQ(MakeFlowVolume(blow), c);
}

TEST(MakeFlowVolumeTest, RejectsWithReason) {
  try {
    MakeFlowVolume({"x", {0, 0.05, 0.1}, 0.01});
    FAIL() << "expected rejection";
  } catch (const RejectedBlow& e) {
    EXPECT_EQ(e.reason(), RejectReason::kTooSmall);
    EXPECT_EQ(e.code(), ErrorCode::kRejected);
  }
}

TEST(DeriveFeaturesTest, TriangularPeak) {
  FlowVolumeCurve c;
  c.valid_len = 21;
  for (std::size_t i = 0; i <= 20; ++i) {
    c.flow[i] = i <= 10 ? 0.8 * i : 0.8 * (20 - i);
    c.volume[i] = 0.1 * i;
  }
  EXPECT_DOUBLE_EQ(DeriveFeatures(c).pef, 8.0);
}

TEST(DeriveFeaturesTest, ConstantFlow) {
  FlowVolumeCurve c;
  c.valid_len = 401;
  for (std::size_t i = 0; i < c.valid_len; ++i) {
    c.volume[i] = 0.01 * i;
    c.flow[i] = 1.0;
  }
  const auto f = DeriveFeatures(c);
  EXPECT_DOUBLE_EQ(f.fvc, 4.0);
  EXPECT_DOUBLE_EQ(f.fef25, 1.0);
  EXPECT_DOUBLE_EQ(f.fef50, 1.0);
  EXPECT_DOUBLE_EQ(f.fef75, 1.0);
  EXPECT_NEAR(f.fev1, 1.0, 1e-12);
}

TEST(DeriveFeaturesTest, ShortBlowUsesFvcForFev1) {
  const auto c = testing::ParametricCurve(80, 1.0, 4.0, 0.8);
  const auto f = DeriveFeatures(c);
  EXPECT_EQ(f.fev1, f.fvc);
}

TEST(DeriveFeaturesTest, DegenerateFvcIsAnError) {
  FlowVolumeCurve c;
  c.valid_len = 10;
  EXPECT_THROW(DeriveFeatures(c), Error);
}

// Oracle: resample both arrays at 100x resolution, then locate each
// crossing on the dense grid and interpolate within the dense segment.
SpiroFeatures DenseOracle(const FlowVolumeCurve& c) {
  const std::size_t dense = (c.valid_len - 1) * 100 + 1;
  std::vector<double> vol(dense), flow(dense);
  for (std::size_t j = 0; j < dense; ++j) {
    const double pos = j / 100.0;
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(pos), c.valid_len - 2);
    const double t = pos - i;
    vol[j] = c.volume[i] * (1 - t) + c.volume[i + 1] * t;
    flow[j] = c.flow[i] * (1 - t) + c.flow[i + 1] * t;
  }
  auto at_volume = [&](double target) {
    for (std::size_t j = 1; j < dense; ++j) {
      if (vol[j] >= target) {
        const double dv = vol[j] - vol[j - 1];
        if (dv <= 0) return flow[j];
        return flow[j - 1] + (target - vol[j - 1]) / dv * (flow[j] - flow[j - 1]);
      }
    }
    return flow.back();
  };
  SpiroFeatures f;
  f.fvc = vol.back();
  f.pef = *std::max_element(flow.begin(), flow.end());
  f.fef25 = at_volume(0.25 * f.fvc);
  f.fef50 = at_volume(0.5 * f.fvc);
  f.fef75 = at_volume(0.75 * f.fvc);
  f.fev1 = dense > 10000 ? vol[10000] : f.fvc;
  return f;
}

TEST(DeriveFeaturesTest, MatchesDenseResamplingOracle) {
  for (double p : {0.8, 1.5, 2.5}) {
    const auto c = testing::ParametricCurve(450, 3.5, 7.0, p);
    const auto f = DeriveFeatures(c), o = DenseOracle(c);
    EXPECT_NEAR(f.fvc, o.fvc, 1e-6);
    EXPECT_NEAR(f.pef, o.pef, 1e-6);
    EXPECT_NEAR(f.fef25, o.fef25, 1e-6);
    EXPECT_NEAR(f.fef50, o.fef50, 1e-6);
    EXPECT_NEAR(f.fef75, o.fef75, 1e-6);
    EXPECT_NEAR(f.fev1, o.fev1, 1e-6);
    const auto flow = c.ValidFlow();
    EXPECT_EQ(f.pef, *std::max_element(flow.begin(), flow.end()));
  }
}

}  // namespace
}  // namespace slse::spiro
