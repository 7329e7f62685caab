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

#include <string>

#include "slse/config.hpp"

namespace slse::config {
namespace {

TEST(ConfigTest, EmptyOverrideGivesDefaults) {
  const RunConfig c = FromJson(json::object());
  EXPECT_EQ(c.Hash(), RunConfig{}.Hash());
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.pipeline.slse.batch_size, 64u);
}

TEST(ConfigTest, RoundTripPreservesHash) {
  json user = {{"synth", {{"n_subjects", 500}, {"effect_size", 0.0}}},
               {"slse", {{"total_steps", 10}, {"encoder", {{"conv_channels", {4, 8}}}}}},
               {"ensemble", {{"n_runs", 4}, {"k", 2}}},
               {"seed", 11}};
  const RunConfig c = FromJson(user);
  EXPECT_EQ(c.synth.n_subjects, 500u);
  EXPECT_EQ(c.synth.effect_size, 0.0);
  EXPECT_EQ(c.pipeline.slse.encoder.conv_channels, (std::vector<std::size_t>{4, 8}));
  const RunConfig again = FromJson(c.ToJson());
  EXPECT_EQ(again.Hash(), c.Hash());
  EXPECT_EQ(again.ToJson(), c.ToJson());
  EXPECT_NE(c.Hash(), RunConfig{}.Hash());
}

TEST(ConfigTest, SeedAndPathsDoNotEnterHash) {
  const RunConfig a = FromJson({{"seed", 1}, {"paths", {{"out", "x"}}}});
  const RunConfig b = FromJson({{"seed", 2}, {"paths", {{"out", "y"}}}});
  EXPECT_EQ(a.Hash(), b.Hash());
  EXPECT_NE(a.SynthConfig().seed, b.SynthConfig().seed);
}

TEST(ConfigTest, UnknownKeysAreRejected) {
  try {
    FromJson({{"synth", {{"bogus", 1}}}});
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
    EXPECT_NE(std::string(e.what()).find("synth.bogus"), std::string::npos);
  }
  EXPECT_THROW(FromJson({{"nonsense", true}}), Error);
}

TEST(ConfigTest, TypeAndRangeErrors) {
  EXPECT_THROW(FromJson({{"synth", {{"n_subjects", -3}}}}), Error);
  EXPECT_THROW(FromJson({{"synth", {{"n_subjects", "many"}}}}), Error);
  EXPECT_THROW(FromJson({{"slse", {{"tau", 2.0}}}}), Error);
  EXPECT_THROW(FromJson({{"split", {{"train", 0.9}}}}), Error);
  EXPECT_THROW(FromJson({{"ensemble", {{"k", 20}}}}), Error);
}

TEST(ConfigTest, AugmentDistributionOverride) {
  const json views = json::array({{{"kind", "vertical_stretch"}, {"weight", 1.0}, {"alpha", {0.5, 0.9}}}});
  const RunConfig c = FromJson({{"slse", {{"first_view", views}}}});
  ASSERT_EQ(c.pipeline.slse.first_view.entries.size(), 1u);
  EXPECT_EQ(c.pipeline.slse.first_view.entries[0].augment.kind,
            augment::AugmentKind::kVerticalStretch);
  const json bad = json::array({{{"kind", "vertical_stretch"}, {"weight", 1.0}, {"gain", {1, 2}}}});
  EXPECT_THROW(FromJson({{"slse", {{"first_view", bad}}}}), Error);
}

}  // namespace
}  // namespace slse::config
