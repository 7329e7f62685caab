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

// Self-supervised spirogram embedding. An online network (encoder,
// projector, predictor) learns to predict the projection that a slowly
// moving target network (encoder, projector) produces for a second
// augmented view of the same curve. Only the online encoder survives
// training; its mean head is the 8-dimensional representation.

#ifndef SLSE_SSRL_HPP_
#define SLSE_SSRL_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "slse/augment.hpp"
#include "slse/common.hpp"
#include "slse/nn.hpp"
#include "slse/spiro.hpp"

namespace slse::ssrl {

using spiro::FlowVolumeCurve;

// Convolutional encoder over the two-channel (volume, flow) curve. Each
// conv block is conv1d -> layer_norm -> relu; the final dense layer emits
// a mean head and a log-variance head of latent_dim each.
struct EncoderSpec {
  std::size_t input_channels = 2;
  std::size_t input_length = spiro::kCurveLength;
  std::vector<std::size_t> conv_channels = {16, 32, 64};
  std::size_t kernel = 5;
  std::size_t stride = 2;
  std::size_t latent_dim = 8;

  nn::Network Build(const std::string& name) const {
    Require(latent_dim > 0, ErrorCode::kParameter, "latent_dim must be > 0");
    std::vector<nn::LayerSpec> layers;
    for (std::size_t c : conv_channels) {
      layers.push_back(nn::LayerSpec::Conv1d(c, kernel, stride));
      layers.push_back(nn::LayerSpec::LayerNorm());
      layers.push_back(nn::LayerSpec::Relu());
    }
    layers.push_back(nn::LayerSpec::Flatten());
    layers.push_back(nn::LayerSpec::Dense(2 * latent_dim));
    return nn::Network(name, {input_channels, input_length}, std::move(layers));
  }

  nlohmann::json ToJson() const {
    return {{"input_channels", input_channels}, {"input_length", input_length},
            {"conv_channels", conv_channels},   {"kernel", kernel},
            {"stride", stride},                 {"latent_dim", latent_dim}};
  }
  static EncoderSpec FromJson(const nlohmann::json& j) {
    EncoderSpec s;
    s.input_channels = j.at("input_channels").get<std::size_t>();
    s.input_length = j.at("input_length").get<std::size_t>();
    s.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
    s.kernel = j.at("kernel").get<std::size_t>();
    s.stride = j.at("stride").get<std::size_t>();
    s.latent_dim = j.at("latent_dim").get<std::size_t>();
    return s;
  }
  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

// linear -> layer_norm -> relu -> linear
struct MlpSpec {
  std::size_t hidden = 64;
  std::size_t output = 32;

  nn::Network Build(const std::string& name, std::size_t input) const {
    return nn::Network(name, {input},
                       {nn::LayerSpec::Dense(hidden), nn::LayerSpec::LayerNorm(),
                        nn::LayerSpec::Relu(), nn::LayerSpec::Dense(output)});
  }
};

inline nn::Tensor CurveToInput(const FlowVolumeCurve& c) {
  nn::Tensor x({2, spiro::kCurveLength});
  std::copy(c.volume.begin(), c.volume.end(), x.data.begin());
  std::copy(c.flow.begin(), c.flow.end(), x.data.begin() + spiro::kCurveLength);
  return x;
}

// Mean head of an encoder output.
inline nn::Tensor MeanHead(const nn::Tensor& encoded, std::size_t latent_dim) {
  return nn::Tensor::Vector(
      std::vector<double>(encoded.data.begin(), encoded.data.begin() + latent_dim));
}

// ---------------------------------------------------------------------------
// Loss and target update
// ---------------------------------------------------------------------------

// Squared distance between the L2-normalized prediction and target:
// 2 - 2 cos(q, z). Lies in [0, 4].
inline double ByolLoss(const nn::Tensor& prediction, const nn::Tensor& target) {
  Require(prediction.size() == target.size(), ErrorCode::kShape,
          "byol loss operands differ in size");
  const double nq = nn::Norm2(prediction.data);
  const double nz = nn::Norm2(target.data);
  Require(nq > 0 && nz > 0, ErrorCode::kNumeric, "byol loss on a zero vector");
  return 2.0 - 2.0 * nn::Dot(prediction.data, target.data) / (nq * nz);
}

// d loss / d prediction. The target is a constant.
inline nn::Tensor ByolLossGradient(const nn::Tensor& prediction,
                                   const nn::Tensor& target) {
  const double nq = nn::Norm2(prediction.data);
  const double nz = nn::Norm2(target.data);
  Require(nq > 0 && nz > 0, ErrorCode::kNumeric, "byol loss on a zero vector");
  const double cosine = nn::Dot(prediction.data, target.data) / (nq * nz);
  nn::Tensor g(prediction.shape);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.data[i] = -2.0 * (target.data[i] / (nq * nz) -
                        cosine * prediction.data[i] / (nq * nq));
  }
  return g;
}

// target <- tau * target + (1 - tau) * online, elementwise.
inline void EmaUpdate(nn::ParameterSet& target, const nn::ParameterSet& online,
                      double tau) {
  Require(tau >= 0 && tau <= 1, ErrorCode::kParameter, "tau must lie in [0, 1]");
  target.RequireSameLayout(online);
  for (std::size_t p = 0; p < target.size(); ++p) {
    auto& xi = target[p].value;
    const auto& theta = online[p].value;
    for (std::size_t i = 0; i < xi.size(); ++i) {
      xi[i] = tau * xi[i] + (1.0 - tau) * theta[i];
    }
  }
  target.MarkMutated();
}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

struct SlseConfig {
  EncoderSpec encoder;
  MlpSpec projector{64, 32};
  MlpSpec predictor{64, 32};
  double tau = 0.99;
  nn::AdamConfig adam;
  std::size_t batch_size = 64;
  std::size_t total_steps = 200;
  std::uint64_t seed = 0;
  augment::AugmentDistribution first_view = augment::AugmentDistribution::Default();
  augment::AugmentDistribution second_view = augment::AugmentDistribution::Default();
  std::size_t workers = 0;  // 0: hardware concurrency

  void Validate() const {
    Require(tau >= 0 && tau <= 1, ErrorCode::kConfig, "tau must lie in [0, 1]");
    Require(adam.learning_rate > 0, ErrorCode::kConfig, "learning rate must be > 0");
    Require(batch_size >= 1, ErrorCode::kConfig, "batch_size must be >= 1");
    Require(total_steps >= 1, ErrorCode::kConfig, "total_steps must be >= 1");
    first_view.Validate();
    second_view.Validate();
  }
};

struct OnlineNetwork {
  nn::Network encoder;
  nn::Network projector;
  nn::Network predictor;
};

struct TargetNetwork {
  nn::Network encoder;
  nn::Network projector;
};

// Builds the online network from `seed` and a target network initialized as
// an exact copy of it.
inline std::pair<OnlineNetwork, TargetNetwork> CreateNetworks(const SlseConfig& cfg) {
  Rng rng(DeriveSeed(cfg.seed, "slse/init"));
  OnlineNetwork online{
      cfg.encoder.Build("encoder"),
      cfg.projector.Build("projector", cfg.encoder.latent_dim),
      cfg.predictor.Build("predictor", cfg.projector.output)};
  online.encoder.Initialize(rng);
  online.projector.Initialize(rng);
  online.predictor.Initialize(rng);
  TargetNetwork target{online.encoder, online.projector};
  return {std::move(online), std::move(target)};
}

// A pair of views: the first feeds the online network, the second the
// target network.
struct ViewPair {
  nn::Tensor online_view;
  nn::Tensor target_view;
};

// Loss for one pair. When `grads` is non-null, adds (scale * d loss / d
// theta) into grads[0..2] (encoder, projector, predictor). Nothing flows
// into the target network.
inline double PairLoss(const OnlineNetwork& online, const TargetNetwork& target,
                       const ViewPair& pair, std::size_t latent_dim,
                       std::vector<nn::Gradients>* grads, double scale) {
  const nn::Tensor target_encoded = target.encoder.Forward(pair.target_view);
  const nn::Tensor z_target =
      target.projector.Forward(MeanHead(target_encoded, latent_dim));

  nn::Tape enc_tape, proj_tape, pred_tape;
  const bool record = grads != nullptr;
  const nn::Tensor encoded =
      online.encoder.Forward(pair.online_view, record ? &enc_tape : nullptr);
  const nn::Tensor z = online.projector.Forward(MeanHead(encoded, latent_dim),
                                                record ? &proj_tape : nullptr);
  const nn::Tensor q = online.predictor.Forward(z, record ? &pred_tape : nullptr);
  const double loss = ByolLoss(q, z_target);
  if (!record) return loss;

  nn::Tensor dq = ByolLossGradient(q, z_target);
  for (double& v : dq.data) v *= scale;
  const nn::Tensor dz = online.predictor.Backward(pred_tape, dq, (*grads)[2]);
  const nn::Tensor dy = online.projector.Backward(proj_tape, dz, (*grads)[1]);
  nn::Tensor dencoded(encoded.shape);
  std::copy(dy.data.begin(), dy.data.end(), dencoded.data.begin());
  online.encoder.Backward(enc_tape, dencoded, (*grads)[0]);
  return loss;
}

// Mean loss over `pairs` and its gradient with respect to the online
// parameters (encoder, projector, predictor).
inline double BatchLossAndGradient(const OnlineNetwork& online,
                                   const TargetNetwork& target,
                                   const std::vector<ViewPair>& pairs,
                                   std::size_t latent_dim,
                                   std::vector<nn::Gradients>& grads,
                                   std::size_t workers = 0) {
  Require(!pairs.empty(), ErrorCode::kValidation, "empty batch");
  const double scale = 1.0 / static_cast<double>(pairs.size());
  const std::vector<double> losses = nn::ParallelAccumulate(
      pairs.size(),
      {&online.encoder.params(), &online.projector.params(),
       &online.predictor.params()},
      grads,
      [&](std::size_t s, std::vector<nn::Gradients>& g) {
        return PairLoss(online, target, pairs[s], latent_dim, &g, scale);
      },
      workers);
  double total = 0;
  for (double l : losses) total += l;
  return total * scale;
}

inline double BatchLoss(const OnlineNetwork& online, const TargetNetwork& target,
                        const std::vector<ViewPair>& pairs, std::size_t latent_dim) {
  double total = 0;
  for (const ViewPair& p : pairs) {
    total += PairLoss(online, target, p, latent_dim, nullptr, 1.0);
  }
  return total / static_cast<double>(pairs.size());
}

// Draws one augmented view pair per curve, in batch order.
inline std::vector<ViewPair> DrawViewPairs(const std::vector<const FlowVolumeCurve*>& batch,
                                           const SlseConfig& cfg, Rng& rng) {
  std::vector<ViewPair> pairs;
  pairs.reserve(batch.size());
  for (const FlowVolumeCurve* c : batch) {
    auto [a, b] = augment::SamplePair(*c, cfg.first_view, cfg.second_view, rng);
    pairs.push_back({CurveToInput(a), CurveToInput(b)});
  }
  return pairs;
}

// Optimizer step on theta from precomputed view pairs, then the target
// update using the new theta.
inline double ApplyTrainStep(const std::vector<ViewPair>& pairs, OnlineNetwork& online,
                             TargetNetwork& target, const SlseConfig& cfg) {
  std::vector<nn::Gradients> grads;
  const double loss = BatchLossAndGradient(online, target, pairs,
                                           cfg.encoder.latent_dim, grads, cfg.workers);
  Require(std::isfinite(loss), ErrorCode::kNumeric, "non-finite training loss");
  nn::Network* nets[] = {&online.encoder, &online.projector, &online.predictor};
  for (std::size_t i = 0; i < 3; ++i) {
    nets[i]->params().ZeroGrad();
    nets[i]->params().AccumulateGradients(grads[i]);
    nn::AdamStep(nets[i]->params(), cfg.adam);
  }
  EmaUpdate(target.encoder.params(), online.encoder.params(), cfg.tau);
  EmaUpdate(target.projector.params(), online.projector.params(), cfg.tau);
  return loss;
}

inline double TrainStep(const std::vector<const FlowVolumeCurve*>& batch,
                        OnlineNetwork& online, TargetNetwork& target,
                        const SlseConfig& cfg, Rng& rng) {
  Require(!batch.empty(), ErrorCode::kValidation, "train step on an empty batch");
  return ApplyTrainStep(DrawViewPairs(batch, cfg, rng), online, target, cfg);
}

// ---------------------------------------------------------------------------
// Pretraining and embedding
// ---------------------------------------------------------------------------

// Curves only. Labels cannot reach the pretraining stage through this type.
struct UnlabeledDataset {
  std::vector<FlowVolumeCurve> curves;
};

inline constexpr const char* kEncoderFormat = "slse-encoder";

struct EncoderCheckpoint {
  EncoderSpec spec;
  nn::Network encoder;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  std::string config_hash;

  std::string Serialize() const {
    nlohmann::json header = {{"format", kEncoderFormat},
                             {"encoder_spec", spec.ToJson()},
                             {"network", encoder.SpecJson()},
                             {"seed", seed},
                             {"step", steps},
                             {"config_hash", config_hash}};
    return nn::SerializeCheckpoint(std::move(header), encoder.params());
  }

  static EncoderCheckpoint Deserialize(const std::string& bytes) {
    const nn::Checkpoint ckpt = nn::ParseCheckpoint(bytes);
    Require(ckpt.header.value("format", "") == kEncoderFormat, ErrorCode::kFormat,
            "checkpoint is not an encoder checkpoint");
    EncoderCheckpoint out;
    out.spec = EncoderSpec::FromJson(ckpt.header.at("encoder_spec"));
    out.encoder = out.spec.Build("encoder");
    Require(out.encoder.SpecJson() == ckpt.header.at("network"), ErrorCode::kFormat,
            "encoder spec does not match the stored network");
    nn::LoadValues(ckpt, out.encoder.params());
    out.seed = ckpt.header.at("seed").get<std::uint64_t>();
    out.steps = ckpt.header.at("step").get<std::uint64_t>();
    out.config_hash = ckpt.header.at("config_hash").get<std::string>();
    return out;
  }

  void Save(const std::filesystem::path& path) const {
    io::WriteFileAtomic(path, Serialize());
  }
  static EncoderCheckpoint Load(const std::filesystem::path& path) {
    return Deserialize(io::ReadFile(path));
  }
};

struct PretrainResult {
  EncoderCheckpoint checkpoint;
  std::vector<double> loss_trace;  // one entry per step
};

inline PretrainResult Pretrain(const UnlabeledDataset& data, const SlseConfig& cfg,
                               const std::string& config_hash = "") {
  cfg.Validate();
  Require(!data.curves.empty(), ErrorCode::kValidation, "pretraining set is empty");
  for (const auto& c : data.curves) c.Validate();
  auto [online, target] = CreateNetworks(cfg);
  Rng rng(DeriveSeed(cfg.seed, "slse/train"));
  std::uniform_int_distribution<std::size_t> pick(0, data.curves.size() - 1);
  PretrainResult result;
  result.loss_trace.reserve(cfg.total_steps);
  std::vector<const FlowVolumeCurve*> batch(cfg.batch_size);
  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    for (auto& b : batch) b = &data.curves[pick(rng)];
    result.loss_trace.push_back(TrainStep(batch, online, target, cfg, rng));
  }
  result.checkpoint.spec = cfg.encoder;
  result.checkpoint.encoder = std::move(online.encoder);
  result.checkpoint.seed = cfg.seed;
  result.checkpoint.steps = cfg.total_steps;
  result.checkpoint.config_hash = config_hash;
  return result;
}

// Mean-head output of the encoder on the unaugmented curve.
inline std::vector<double> Embed(const EncoderCheckpoint& ckpt, const FlowVolumeCurve& c) {
  const nn::Tensor encoded = ckpt.encoder.Forward(CurveToInput(c));
  return MeanHead(encoded, ckpt.spec.latent_dim).data;
}

inline std::vector<std::vector<double>> EmbedAll(const EncoderCheckpoint& ckpt,
                                                 const std::vector<FlowVolumeCurve>& curves) {
  std::vector<std::vector<double>> out;
  out.reserve(curves.size());
  for (const auto& c : curves) out.push_back(Embed(ckpt, c));
  return out;
}

inline std::string LossLogCsv(const std::vector<double>& trace) {
  std::string out = "step,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out += std::to_string(i) + "," + FormatDouble(trace[i]) + "\n";
  }
  return out;
}

}  // namespace slse::ssrl

#endif  // SLSE_SSRL_HPP_
