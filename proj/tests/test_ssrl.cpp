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
#include <numeric>
#include <vector>

#include "slse/ssrl.hpp"
#include "test_util.hpp"

namespace slse::ssrl {
namespace {

using nn::Tensor;

TEST(ByolLossTest, Anchors) {
  EXPECT_NEAR(ByolLoss(Tensor::Vector({1, 0}), Tensor::Vector({1, 0})), 0.0, 1e-15);
  EXPECT_NEAR(ByolLoss(Tensor::Vector({1, 0}), Tensor::Vector({0, 1})), 2.0, 1e-15);
  EXPECT_NEAR(ByolLoss(Tensor::Vector({1, 0}), Tensor::Vector({-1, 0})), 4.0, 1e-15);
}

TEST(ByolLossTest, BoundedAndScaleInvariant) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto q = Tensor::Vector(testing::RandomVector(16, rng));
    const auto z = Tensor::Vector(testing::RandomVector(16, rng));
    const double l = ByolLoss(q, z);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 4.0);
    Tensor q2 = q, z2 = z;
    for (double& v : q2.data) v *= 3.7;
    for (double& v : z2.data) v *= 0.02;
    EXPECT_NEAR(ByolLoss(q2, z2), l, 1e-12);
  }
}

TEST(ByolLossTest, ZeroVectorIsAnError) {
  EXPECT_THROW(ByolLoss(Tensor::Vector({0, 0}), Tensor::Vector({1, 0})), Error);
}

TEST(ByolLossTest, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  const auto z = Tensor::Vector(testing::RandomVector(8, rng));
  Tensor q = Tensor::Vector(testing::RandomVector(8, rng));
  const Tensor g = ByolLossGradient(q, z);
  for (std::size_t i = 0; i < 8; ++i) {
    const double orig = q[i], h = 1e-6;
    q[i] = orig + h;
    const double up = ByolLoss(q, z);
    q[i] = orig - h;
    const double down = ByolLoss(q, z);
    q[i] = orig;
    EXPECT_LT(testing::RelativeError(g[i], (up - down) / (2 * h)), 1e-6);
  }
}

TEST(EmaUpdateTest, Endpoints) {
  nn::ParameterSet online, target;
  online.Add("w", {3});
  target.Add("w", {3});
  online[0].value = {1, 2, 3};
  target[0].value = {10, 20, 30};

  auto t = target;
  EmaUpdate(t, online, 1.0);
  EXPECT_EQ(t[0].value, target[0].value);
  EmaUpdate(t, online, 0.0);
  EXPECT_EQ(t[0].value, online[0].value);

  t = target;
  EmaUpdate(t, online, 0.99);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(t[0].value[i], 0.99 * target[0].value[i] + 0.01 * online[0].value[i]);
  }
  EXPECT_THROW(EmaUpdate(t, online, 1.5), Error);
}

TEST(CreateNetworksTest, TargetStartsAsCopy) {
  SlseConfig cfg;
  cfg.seed = 3;
  auto [online, target] = CreateNetworks(cfg);
  for (std::size_t i = 0; i < online.encoder.params().size(); ++i) {
    EXPECT_EQ(online.encoder.params()[i].value, target.encoder.params()[i].value);
  }
  for (std::size_t i = 0; i < online.projector.params().size(); ++i) {
    EXPECT_EQ(online.projector.params()[i].value, target.projector.params()[i].value);
  }
}

std::vector<spiro::FlowVolumeCurve> Curves(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> fvc(2.5, 5.5), pef(5, 10), p(0.8, 2.5);
  std::uniform_int_distribution<std::size_t> len(300, 1000);
  std::vector<spiro::FlowVolumeCurve> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(testing::ParametricCurve(len(rng), fvc(rng), pef(rng), p(rng),
                                           "c" + std::to_string(i)));
  }
  return out;
}

TEST(BatchGradientTest, MatchesFiniteDifferences) {
  SlseConfig cfg;
  cfg.seed = 4;
  cfg.encoder.conv_channels = {4, 6};
  cfg.projector = {12, 6};
  cfg.predictor = {12, 6};
  auto [online, target] = CreateNetworks(cfg);
  // Move the target away from the online copy so the loss is not trivially 0.
  Rng rng(5);
  for (auto& p : target.projector.params())
    for (double& v : p.value) v += 0.3 * std::normal_distribution<double>(0, 1)(rng);
  target.projector.params().MarkMutated();

  const auto curves = Curves(2, 6);
  const std::vector<const spiro::FlowVolumeCurve*> batch = {&curves[0], &curves[1]};
  const auto pairs = DrawViewPairs(batch, cfg, rng);
  std::vector<nn::Gradients> grads;
  BatchLossAndGradient(online, target, pairs, cfg.encoder.latent_dim, grads, 1);
  auto loss = [&] { return BatchLoss(online, target, pairs, cfg.encoder.latent_dim); };

  nn::Network* nets[] = {&online.encoder, &online.projector, &online.predictor};
  for (std::size_t k = 0; k < 3; ++k) {
    const auto r = testing::CheckGradients(nets[k]->params(), grads[k], loss, 1e-6, 6, 7 + k);
    EXPECT_LT(r.max_rel_error, 1e-4) << nets[k]->name() << " " << r.worst;
  }
}

TEST(BatchGradientTest, WorkerCountDoesNotChangeGradient) {
  SlseConfig cfg;
  cfg.seed = 8;
  cfg.encoder.conv_channels = {4, 6};
  auto [online, target] = CreateNetworks(cfg);
  const auto curves = Curves(10, 9);
  std::vector<const spiro::FlowVolumeCurve*> batch;
  for (const auto& c : curves) batch.push_back(&c);
  Rng rng(10);
  const auto pairs = DrawViewPairs(batch, cfg, rng);
  std::vector<nn::Gradients> g1, g3;
  const double l1 = BatchLossAndGradient(online, target, pairs, cfg.encoder.latent_dim, g1, 1);
  const double l3 = BatchLossAndGradient(online, target, pairs, cfg.encoder.latent_dim, g3, 3);
  EXPECT_EQ(l1, l3);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(g1[k].values, g3[k].values);
}

TEST(TrainStepTest, TargetIsNotTouchedByGradients) {
  SlseConfig cfg;
  cfg.seed = 11;
  cfg.tau = 1.0;
  cfg.encoder.conv_channels = {4};
  auto [online, target] = CreateNetworks(cfg);
  const auto before = target.encoder.params()[0].value;
  const auto curves = Curves(4, 12);
  std::vector<const spiro::FlowVolumeCurve*> batch;
  for (const auto& c : curves) batch.push_back(&c);
  Rng rng(13);
  TrainStep(batch, online, target, cfg, rng);
  EXPECT_EQ(target.encoder.params()[0].value, before);
  EXPECT_NE(online.encoder.params()[0].value, before);
}

SlseConfig SmallConfig(std::uint64_t seed) {
  SlseConfig cfg;
  cfg.seed = seed;
  cfg.encoder.conv_channels = {8, 16, 16};
  cfg.batch_size = 64;
  cfg.total_steps = 200;
  return cfg;
}

TEST(PretrainTest, LossDecreases) {
  const UnlabeledDataset data{Curves(64, 14)};
  const auto result = Pretrain(data, SmallConfig(15));
  ASSERT_EQ(result.loss_trace.size(), 200u);
  const auto& t = result.loss_trace;
  const double head = std::accumulate(t.begin(), t.begin() + 20, 0.0) / 20;
  const double tail = std::accumulate(t.end() - 20, t.end(), 0.0) / 20;
  EXPECT_LT(tail, head);
  for (double l : t) EXPECT_TRUE(std::isfinite(l));
}

TEST(PretrainTest, DeterministicCheckpointBytes) {
  const UnlabeledDataset data{Curves(16, 16)};
  SlseConfig cfg = SmallConfig(17);
  cfg.total_steps = 5;
  cfg.batch_size = 8;
  const auto a = Pretrain(data, cfg, "h").checkpoint.Serialize();
  cfg.workers = 1;
  const auto b = Pretrain(data, cfg, "h").checkpoint.Serialize();
  EXPECT_EQ(a, b);
  cfg.seed = 18;
  EXPECT_NE(Pretrain(data, cfg, "h").checkpoint.Serialize(), a);
}

TEST(EncoderCheckpointTest, RoundTripAndEmbedding) {
  const UnlabeledDataset data{Curves(8, 19)};
  SlseConfig cfg = SmallConfig(20);
  cfg.total_steps = 2;
  cfg.batch_size = 4;
  const auto ckpt = Pretrain(data, cfg, "abc").checkpoint;
  const auto copy = EncoderCheckpoint::Deserialize(ckpt.Serialize());
  EXPECT_EQ(copy.config_hash, "abc");
  EXPECT_EQ(copy.seed, 20u);
  EXPECT_EQ(copy.steps, 2u);
  EXPECT_EQ(copy.spec, ckpt.spec);
  const auto e1 = Embed(ckpt, data.curves[0]);
  EXPECT_EQ(e1.size(), 8u);
  EXPECT_EQ(Embed(copy, data.curves[0]), e1);
  EXPECT_EQ(Embed(ckpt, data.curves[0]), e1);
  EXPECT_THROW(EncoderCheckpoint::Deserialize("garbage"), Error);
}

TEST(PretrainTest, RejectsBadConfig) {
  SlseConfig cfg;
  cfg.tau = 1.2;
  EXPECT_THROW(Pretrain(UnlabeledDataset{Curves(2, 21)}, cfg), Error);
  EXPECT_THROW(Pretrain(UnlabeledDataset{}, SlseConfig{}), Error);
}

TEST(LossLogCsvTest, Format) {
  EXPECT_EQ(LossLogCsv({0.5, 0.25}), "step,loss\n0,0.5\n1,0.25\n");
}

}  // namespace
}  // namespace slse::ssrl
