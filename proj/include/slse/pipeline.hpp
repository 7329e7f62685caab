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

// Downstream stage: probe over frozen embeddings, feature fusion, top-k
// ensemble, sealed evaluation, and the ablation configurations.

#ifndef SLSE_PIPELINE_HPP_
#define SLSE_PIPELINE_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "slse/augment.hpp"
#include "slse/cohort.hpp"
#include "slse/common.hpp"
#include "slse/eval.hpp"
#include "slse/gbdt.hpp"
#include "slse/nn.hpp"
#include "slse/ssrl.hpp"

namespace slse::pipeline {

using cohort::DemographicVector;
using cohort::SubjectRecord;

// ---------------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------------

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;

  void Validate() const {
    Require(train >= 0 && val >= 0 && test >= 0, ErrorCode::kConfig,
            "split ratios must be non-negative");
    Require(std::fabs(train + val + test - 1.0) < 1e-9, ErrorCode::kConfig,
            "split ratios must sum to 1");
  }
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Label-stratified split. Overall train/val sizes are round(ratio * n); the
// positives are apportioned the same way, so each split's positive count is
// within one subject of its proportional share.
inline SplitIndices SplitDataset(std::span<const int> labels, const SplitRatios& ratios,
                                 std::uint64_t seed) {
  ratios.Validate();
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Require(labels[i] == 0 || labels[i] == 1, ErrorCode::kValidation, "labels must be 0/1");
    (labels[i] ? pos : neg).push_back(i);
  }
  Rng rng(DeriveSeed(seed, "split"));
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);

  const auto share = [](double r, std::size_t n) {
    return static_cast<std::size_t>(std::llround(r * static_cast<double>(n)));
  };
  const std::size_t n = labels.size();
  const std::size_t n_train = std::min(share(ratios.train, n), n);
  const std::size_t n_val = std::min(share(ratios.val, n), n - n_train);
  const std::size_t p_train = std::min(share(ratios.train, pos.size()), pos.size());
  const std::size_t p_val = std::min(share(ratios.val, pos.size()), pos.size() - p_train);
  Require(n_train >= p_train && n_val >= p_val && n_train - p_train + n_val - p_val <= neg.size(),
          ErrorCode::kValidation, "cannot stratify: too few negatives");

  SplitIndices out;
  auto take = [](std::vector<std::size_t>& dst, const std::vector<std::size_t>& src,
                 std::size_t from, std::size_t to) {
    dst.insert(dst.end(), src.begin() + static_cast<std::ptrdiff_t>(from),
               src.begin() + static_cast<std::ptrdiff_t>(to));
  };
  take(out.train, pos, 0, p_train);
  take(out.val, pos, p_train, p_train + p_val);
  take(out.test, pos, p_train + p_val, pos.size());
  const std::size_t q_train = n_train - p_train, q_val = n_val - p_val;
  take(out.train, neg, 0, q_train);
  take(out.val, neg, q_train, q_train + q_val);
  take(out.test, neg, q_train + q_val, neg.size());

  const std::pair<const char*, std::pair<double, const std::vector<std::size_t>*>> parts[] = {
      {"train", {ratios.train, &out.train}},
      {"val", {ratios.val, &out.val}},
      {"test", {ratios.test, &out.test}}};
  for (const auto& [name, part] : parts) {
    if (part.first <= 0) continue;
    std::size_t positives = 0;
    for (std::size_t i : *part.second) positives += static_cast<std::size_t>(labels[i]);
    Require(positives > 0 && positives < part.second->size(), ErrorCode::kValidation,
            std::string(name) + " split lacks one of the classes");
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

// ---------------------------------------------------------------------------
// Sealed test partition
// ---------------------------------------------------------------------------

class Evaluator;

// Test records whose labels and ejection fractions can only be read by the
// Evaluator.
class SealedTestSet {
 public:
  SealedTestSet() = default;
  explicit SealedTestSet(std::vector<SubjectRecord> records) : records_(std::move(records)) {}

  std::size_t size() const { return records_.size(); }
  const spiro::FlowVolumeCurve& curve(std::size_t i) const { return records_.at(i).curve; }
  const DemographicVector& demo(std::size_t i) const { return records_.at(i).demo; }
  const std::string& subject_id(std::size_t i) const { return records_.at(i).subject_id(); }

 private:
  friend class Evaluator;
  std::vector<SubjectRecord> records_;
};

struct Partition {
  std::vector<SubjectRecord> train;
  std::vector<SubjectRecord> val;
  SealedTestSet test;
};

inline Partition PartitionRecords(const std::vector<SubjectRecord>& records,
                                  const SplitRatios& ratios, std::uint64_t seed) {
  std::vector<int> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(r.label_rhf);
  const SplitIndices idx = SplitDataset(labels, ratios, seed);
  Partition p;
  for (std::size_t i : idx.train) p.train.push_back(records[i]);
  for (std::size_t i : idx.val) p.val.push_back(records[i]);
  std::vector<SubjectRecord> test;
  for (std::size_t i : idx.test) test.push_back(records[i]);
  p.test = SealedTestSet(std::move(test));
  return p;
}

// Subgroups over demographics: age bands (41-44 joins the middle band) and
// both levels of each binary field.
inline std::vector<eval::SubgroupDefinition> StandardSubgroups(
    const std::vector<DemographicVector>& demos) {
  std::vector<eval::SubgroupDefinition> groups;
  const std::size_t n = demos.size();
  struct Band {
    const char* name;
    int lo, hi;
  };
  for (const Band& b : {Band{"age 18-40", 18, 40}, Band{"age 45-54", 41, 54},
                        Band{"age 55+", 55, 1000}}) {
    eval::SubgroupDefinition g{b.name, "age", std::vector<char>(n)};
    for (std::size_t i = 0; i < n; ++i) g.members[i] = demos[i].age >= b.lo && demos[i].age <= b.hi;
    groups.push_back(std::move(g));
  }
  std::vector<std::string> flags = {"sex", "smoke", "copd"};
  for (const auto& f : cohort::ExtendedFlagNames()) flags.push_back(f);
  for (const auto& flag : flags) {
    for (int level : {1, 0}) {
      eval::SubgroupDefinition g{flag + "=" + std::to_string(level), flag,
                                 std::vector<char>(n)};
      for (std::size_t i = 0; i < n; ++i) g.members[i] = cohort::FlagByName(demos[i], flag) == level;
      groups.push_back(std::move(g));
    }
  }
  return groups;
}

class Evaluator {
 public:
  // Scores must follow the test set's order.
  static eval::EvalReport Evaluate(const SealedTestSet& test, std::span<const double> scores,
                                   nlohmann::json metadata = nlohmann::json::object()) {
    Require(scores.size() == test.size(), ErrorCode::kShape,
            "expected one score per test subject");
    std::vector<int> labels;
    std::vector<DemographicVector> demos;
    for (const auto& r : test.records_) {
      labels.push_back(r.label_rhf);
      demos.push_back(r.demo);
    }
    eval::EvalReport report = eval::SubgroupAnalysis(scores, labels, StandardSubgroups(demos));
    report.metadata = std::move(metadata);
    return report;
  }
};

// Characteristics table of `records` grouped by the RHF label.
inline eval::CharacteristicsTable Characteristics(const std::vector<SubjectRecord>& records) {
  std::vector<int> group;
  eval::ContinuousColumn age{"age", {}};
  std::vector<eval::BinaryColumn> binary;
  std::vector<std::string> flags = {"sex", "smoke", "copd"};
  for (const auto& f : cohort::ExtendedFlagNames()) flags.push_back(f);
  for (const auto& f : flags) binary.push_back({f, {}});
  for (const auto& r : records) {
    group.push_back(r.label_rhf);
    age.values.push_back(r.demo.age);
    for (auto& col : binary) col.values.push_back(cohort::FlagByName(r.demo, col.name));
  }
  return eval::BuildCharacteristicsTable(group, {age}, binary);
}

// ---------------------------------------------------------------------------
// Probe
// ---------------------------------------------------------------------------

struct ProbeConfig {
  std::size_t hidden = 16;
  std::size_t steps = 500;
  std::size_t batch_size = 256;  // 0: full batch
  nn::AdamConfig adam{0.01};

  void Validate() const {
    Require(hidden >= 1 && steps >= 1, ErrorCode::kConfig, "probe hidden/steps must be >= 1");
    Require(adam.learning_rate > 0, ErrorCode::kConfig, "probe learning rate must be > 0");
  }
};

inline constexpr const char* kProbeFormat = "slse-probe";

// Standardization, then dense(hidden) -> relu -> dense(1). The relu output
// is the penultimate representation fed to the fusion step.
struct Probe {
  std::vector<double> mean;
  std::vector<double> scale;
  nn::Network net;

  static nn::Network BuildNetwork(std::size_t input, std::size_t hidden) {
    return nn::Network("probe", {input},
                       {nn::LayerSpec::Dense(hidden), nn::LayerSpec::Relu(),
                        nn::LayerSpec::Dense(1)});
  }

  std::size_t input_dim() const { return mean.size(); }
  std::size_t hidden_dim() const { return net.params()[0].shape[0]; }

  nn::Tensor Standardize(std::span<const double> e) const {
    Require(e.size() == mean.size(), ErrorCode::kShape,
            "probe expects " + std::to_string(mean.size()) + "-dim embeddings");
    nn::Tensor x({e.size()});
    for (std::size_t i = 0; i < e.size(); ++i) x.data[i] = (e[i] - mean[i]) / scale[i];
    return x;
  }

  std::vector<double> Hidden(std::span<const double> e) const {
    nn::Tape tape;
    net.Forward(Standardize(e), &tape);
    return tape.inputs[2].data;
  }

  double Logit(std::span<const double> e) const { return net.Forward(Standardize(e)).data[0]; }
  double Proba(std::span<const double> e) const { return Sigmoid(Logit(e)); }

  std::string Serialize() const {
    nlohmann::json header = {{"format", kProbeFormat},
                             {"network", net.SpecJson()},
                             {"mean", mean},
                             {"scale", scale}};
    return nn::SerializeCheckpoint(std::move(header), net.params());
  }

  static Probe Deserialize(const std::string& bytes) {
    const nn::Checkpoint ckpt = nn::ParseCheckpoint(bytes);
    Require(ckpt.header.value("format", "") == kProbeFormat, ErrorCode::kFormat,
            "checkpoint is not a probe checkpoint");
    Probe p;
    p.net = nn::Network::FromSpecJson(ckpt.header.at("network"));
    p.mean = ckpt.header.at("mean").get<std::vector<double>>();
    p.scale = ckpt.header.at("scale").get<std::vector<double>>();
    nn::LoadValues(ckpt, p.net.params());
    return p;
  }
};

// Mean logistic loss of the probe over rows `idx`; with `grads`, adds the
// gradient with respect to the probe parameters.
inline double ProbeLoss(const Probe& probe, const std::vector<std::vector<double>>& emb,
                        std::span<const int> labels, std::span<const std::size_t> idx,
                        nn::Gradients* grads) {
  const double inv_n = 1.0 / static_cast<double>(idx.size());
  double loss = 0;
  nn::Tape tape;
  for (std::size_t i : idx) {
    const nn::Tensor out = probe.net.Forward(probe.Standardize(emb[i]), grads ? &tape : nullptr);
    const double z = out.data[0];
    const double y = labels[i];
    // softplus(z) - y z, computed stably
    loss += (std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z))) - y * z) * inv_n;
    if (grads != nullptr) {
      nn::Tensor g({1});
      g.data[0] = (Sigmoid(z) - y) * inv_n;
      probe.net.Backward(tape, g, *grads);
    }
  }
  return loss;
}

inline Probe TrainProbe(const std::vector<std::vector<double>>& emb, std::span<const int> labels,
                        const ProbeConfig& cfg, std::uint64_t seed) {
  cfg.Validate();
  Require(!emb.empty() && emb.size() == labels.size(), ErrorCode::kShape,
          "probe needs one label per embedding");
  const std::size_t positives =
      static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  Require(positives > 0 && positives < labels.size(), ErrorCode::kValidation,
          "probe training needs both classes");
  const std::size_t dim = emb[0].size();
  Probe probe;
  probe.mean.assign(dim, 0.0);
  probe.scale.assign(dim, 0.0);
  for (const auto& e : emb) {
    Require(e.size() == dim, ErrorCode::kShape, "ragged embeddings");
    for (std::size_t d = 0; d < dim; ++d) probe.mean[d] += e[d];
  }
  for (double& m : probe.mean) m /= static_cast<double>(emb.size());
  for (const auto& e : emb) {
    for (std::size_t d = 0; d < dim; ++d) probe.scale[d] += (e[d] - probe.mean[d]) * (e[d] - probe.mean[d]);
  }
  for (double& s : probe.scale) {
    s = std::sqrt(s / static_cast<double>(emb.size()));
    if (!(s > 1e-12)) s = 1.0;
  }
  probe.net = Probe::BuildNetwork(dim, cfg.hidden);
  Rng rng(DeriveSeed(seed, "probe"));
  probe.net.Initialize(rng);

  std::vector<std::size_t> order(emb.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch =
      cfg.batch_size == 0 ? order.size() : std::min(cfg.batch_size, order.size());
  std::size_t cursor = order.size();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor + batch > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    nn::Gradients g = probe.net.params().MakeGradients();
    ProbeLoss(probe, emb, labels,
              std::span<const std::size_t>(order.data() + cursor, batch), &g);
    cursor += batch;
    probe.net.params().ZeroGrad();
    probe.net.params().AccumulateGradients(g);
    nn::AdamStep(probe.net.params(), cfg.adam);
  }
  return probe;
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

inline std::vector<double> Fuse(std::span<const double> f_prime, const DemographicVector& demo,
                                bool extended = false) {
  std::vector<double> out(f_prime.begin(), f_prime.end());
  for (double v : cohort::DemographicFeatures(demo, extended)) out.push_back(v);
  return out;
}

inline std::vector<std::string> DemographicFeatureNames(bool extended) {
  std::vector<std::string> names = cohort::BaseDemographicNames();
  if (extended) {
    for (const auto& f : cohort::ExtendedFlagNames()) names.push_back(f);
  }
  return names;
}

inline std::vector<std::string> FusedFeatureNames(std::size_t hidden, bool extended) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < hidden; ++i) names.push_back("f_embed_" + std::to_string(i));
  for (const auto& n : DemographicFeatureNames(extended)) names.push_back(n);
  return names;
}

// ---------------------------------------------------------------------------
// Bundles and ensembles
// ---------------------------------------------------------------------------

enum class FeatureMode { kFused, kDemographicsOnly, kEmbeddingOnly };

inline const char* FeatureModeName(FeatureMode m) {
  switch (m) {
    case FeatureMode::kFused: return "fused";
    case FeatureMode::kDemographicsOnly: return "demographics_only";
    case FeatureMode::kEmbeddingOnly: return "embedding_only";
  }
  return "?";
}

inline FeatureMode ParseFeatureMode(const std::string& s) {
  for (FeatureMode m : {FeatureMode::kFused, FeatureMode::kDemographicsOnly,
                        FeatureMode::kEmbeddingOnly}) {
    if (s == FeatureModeName(m)) return m;
  }
  throw Error(ErrorCode::kFormat, "unknown feature mode '" + s + "'");
}

inline bool UsesEmbeddings(FeatureMode m) { return m != FeatureMode::kDemographicsOnly; }

struct ClassifierBundle {
  std::uint64_t seed = 0;
  double val_auroc = 0;
  std::optional<Probe> probe;        // absent for demographics-only
  std::optional<gbdt::GbdtModel> tree;  // absent for embedding-only

  // Feature vector handed to the tree model.
  std::vector<double> TreeFeatures(const std::vector<double>* embedding,
                                   const DemographicVector& demo, bool extended) const {
    if (!probe) return cohort::DemographicFeatures(demo, extended);
    Require(embedding != nullptr, ErrorCode::kValidation, "bundle requires an embedding");
    return Fuse(probe->Hidden(*embedding), demo, extended);
  }

  double Proba(const std::vector<double>* embedding, const DemographicVector& demo,
               bool extended) const {
    if (!tree) {
      Require(probe.has_value() && embedding != nullptr, ErrorCode::kState,
              "bundle has neither a tree model nor a probe");
      return probe->Proba(*embedding);
    }
    return tree->PredictProba(TreeFeatures(embedding, demo, extended));
  }
};

struct EnsembleConfig {
  std::size_t n_runs = 10;
  std::size_t k = 3;
  FeatureMode mode = FeatureMode::kFused;
  bool extended_demographics = false;
  ProbeConfig probe;
  gbdt::GbdtParams gbdt;

  EnsembleConfig() { gbdt.subsample = 0.8; }

  void Validate() const {
    Require(k >= 1, ErrorCode::kConfig, "k must be >= 1");
    Require(n_runs >= k, ErrorCode::kConfig, "n_runs must be >= k");
    probe.Validate();
  }
};

inline constexpr const char* kEnsembleFormat = "slse-ensemble";
inline constexpr int kEnsembleVersion = 1;

struct EnsembleBundle {
  std::vector<ClassifierBundle> bundles;  // validation AUROC, descending
  FeatureMode mode = FeatureMode::kFused;
  bool extended_demographics = false;
  std::vector<std::uint64_t> run_seeds;
  std::vector<double> run_val_aurocs;
  std::optional<ssrl::EncoderCheckpoint> encoder;

  std::vector<std::string> FeatureNames() const {
    switch (mode) {
      case FeatureMode::kFused:
        return FusedFeatureNames(bundles.at(0).probe->hidden_dim(), extended_demographics);
      case FeatureMode::kDemographicsOnly:
        return DemographicFeatureNames(extended_demographics);
      case FeatureMode::kEmbeddingOnly: {
        std::vector<std::string> names;
        for (std::size_t i = 0; i < bundles.at(0).probe->input_dim(); ++i) {
          names.push_back("embed_" + std::to_string(i));
        }
        return names;
      }
    }
    return {};
  }

  // Mean of the member probabilities. `embedding` may be null in
  // demographics-only mode.
  double Predict(const std::vector<double>* embedding, const DemographicVector& demo) const {
    Require(!bundles.empty(), ErrorCode::kState, "empty ensemble");
    double sum = 0;
    for (const auto& b : bundles) sum += b.Proba(embedding, demo, extended_demographics);
    return sum / static_cast<double>(bundles.size());
  }

  double Predict(const spiro::FlowVolumeCurve& curve, const DemographicVector& demo) const {
    if (!UsesEmbeddings(mode)) return Predict(nullptr, demo);
    Require(encoder.has_value(), ErrorCode::kState, "ensemble lacks its encoder");
    const std::vector<double> e = ssrl::Embed(*encoder, curve);
    return Predict(&e, demo);
  }
};

// Inputs for one split. `embeddings` is empty in demographics-only mode.
struct LabeledSplit {
  std::vector<std::vector<double>> embeddings;
  std::vector<DemographicVector> demos;
  std::vector<int> labels;
};

inline LabeledSplit MakeLabeledSplit(const std::vector<SubjectRecord>& records,
                                     const ssrl::EncoderCheckpoint* encoder) {
  LabeledSplit s;
  for (const auto& r : records) {
    if (encoder != nullptr) s.embeddings.push_back(ssrl::Embed(*encoder, r.curve));
    s.demos.push_back(r.demo);
    s.labels.push_back(r.label_rhf);
  }
  return s;
}

inline ClassifierBundle TrainBundle(const LabeledSplit& train, const LabeledSplit& val,
                                    const EnsembleConfig& cfg, std::uint64_t seed) {
  ClassifierBundle b;
  b.seed = seed;
  const bool ext = cfg.extended_demographics;
  if (UsesEmbeddings(cfg.mode)) {
    Require(train.embeddings.size() == train.labels.size() &&
                val.embeddings.size() == val.labels.size(),
            ErrorCode::kShape, "embedding mode needs embeddings for every record");
    b.probe = TrainProbe(train.embeddings, train.labels, cfg.probe, seed);
  }
  if (cfg.mode != FeatureMode::kEmbeddingOnly) {
    std::vector<std::vector<double>> rows;
    rows.reserve(train.labels.size());
    for (std::size_t i = 0; i < train.labels.size(); ++i) {
      rows.push_back(b.TreeFeatures(b.probe ? &train.embeddings[i] : nullptr, train.demos[i], ext));
    }
    gbdt::GbdtParams params = cfg.gbdt;
    params.seed = DeriveSeed(seed, "gbdt");
    const auto names = b.probe ? FusedFeatureNames(cfg.probe.hidden, ext)
                               : DemographicFeatureNames(ext);
    b.tree = gbdt::Fit(gbdt::FeatureMatrix::FromRows(rows), train.labels, params, names);
  }
  std::vector<double> scores;
  for (std::size_t i = 0; i < val.labels.size(); ++i) {
    scores.push_back(b.Proba(b.probe ? &val.embeddings[i] : nullptr, val.demos[i], ext));
  }
  b.val_auroc = eval::Auroc(scores, val.labels);
  return b;
}

// Trains n_runs bundles with distinct seeds and keeps the k best by
// validation AUROC (ties: earlier run first).
inline EnsembleBundle TrainEnsemble(const LabeledSplit& train, const LabeledSplit& val,
                                    const EnsembleConfig& cfg, std::uint64_t seed) {
  cfg.Validate();
  EnsembleBundle e;
  e.mode = cfg.mode;
  e.extended_demographics = cfg.extended_demographics;
  std::vector<ClassifierBundle> runs;
  for (std::size_t r = 0; r < cfg.n_runs; ++r) {
    const std::uint64_t run_seed = MixSeed(DeriveSeed(seed, "ensemble"), r);
    runs.push_back(TrainBundle(train, val, cfg, run_seed));
    e.run_seeds.push_back(run_seed);
    e.run_val_aurocs.push_back(runs.back().val_auroc);
  }
  std::stable_sort(runs.begin(), runs.end(), [](const auto& a, const auto& b) {
    return a.val_auroc > b.val_auroc;
  });
  runs.resize(cfg.k);
  e.bundles = std::move(runs);
  return e;
}

// ---------------------------------------------------------------------------
// Ensemble directory
// ---------------------------------------------------------------------------

inline void SaveEnsemble(const std::filesystem::path& dir, const EnsembleBundle& e,
                         const std::string& config_hash, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  nlohmann::json bundles = nlohmann::json::array();
  for (std::size_t i = 0; i < e.bundles.size(); ++i) {
    const ClassifierBundle& b = e.bundles[i];
    nlohmann::json entry = {{"seed", b.seed}, {"val_auroc", b.val_auroc},
                            {"probe", nullptr}, {"gbdt", nullptr}};
    const std::string stem = "bundle_" + std::to_string(i);
    if (b.probe) {
      io::WriteFileAtomic(dir / (stem + "_probe.ckpt"), b.probe->Serialize());
      entry["probe"] = stem + "_probe.ckpt";
    }
    if (b.tree) {
      io::WriteFileAtomic(dir / (stem + "_gbdt.json"), gbdt::ModelToJson(*b.tree).dump(1) + "\n");
      entry["gbdt"] = stem + "_gbdt.json";
    }
    bundles.push_back(entry);
  }
  nlohmann::json manifest = {{"format", kEnsembleFormat},
                             {"version", kEnsembleVersion},
                             {"config_hash", config_hash},
                             {"seed", seed},
                             {"mode", FeatureModeName(e.mode)},
                             {"extended_demographics", e.extended_demographics},
                             {"feature_names", e.FeatureNames()},
                             {"k", e.bundles.size()},
                             {"n_runs", e.run_seeds.size()},
                             {"run_seeds", e.run_seeds},
                             {"run_val_aurocs", e.run_val_aurocs},
                             {"encoder", nullptr},
                             {"bundles", bundles}};
  if (e.encoder) {
    e.encoder->Save(dir / "encoder.ckpt");
    manifest["encoder"] = "encoder.ckpt";
  }
  io::WriteFileAtomic(dir / "manifest.json", manifest.dump(1) + "\n");
}

inline nlohmann::json ReadManifest(const std::filesystem::path& dir) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::ReadFile(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kFormat, std::string("ensemble manifest: ") + ex.what());
  }
  Require(m.value("format", "") == kEnsembleFormat, ErrorCode::kFormat,
          "not an ensemble manifest");
  Require(m.value("version", -1) == kEnsembleVersion, ErrorCode::kFormat,
          "ensemble format version " + m.value("version", nlohmann::json()).dump() +
              " is not supported (expected " + std::to_string(kEnsembleVersion) + ")");
  return m;
}

inline EnsembleBundle LoadEnsemble(const std::filesystem::path& dir) {
  const nlohmann::json m = ReadManifest(dir);
  EnsembleBundle e;
  e.mode = ParseFeatureMode(m.at("mode").get<std::string>());
  e.extended_demographics = m.at("extended_demographics").get<bool>();
  e.run_seeds = m.at("run_seeds").get<std::vector<std::uint64_t>>();
  e.run_val_aurocs = m.at("run_val_aurocs").get<std::vector<double>>();
  if (!m.at("encoder").is_null()) {
    e.encoder = ssrl::EncoderCheckpoint::Load(dir / m.at("encoder").get<std::string>());
  }
  for (const auto& entry : m.at("bundles")) {
    ClassifierBundle b;
    b.seed = entry.at("seed").get<std::uint64_t>();
    b.val_auroc = entry.at("val_auroc").get<double>();
    if (!entry.at("probe").is_null()) {
      b.probe = Probe::Deserialize(io::ReadFile(dir / entry.at("probe").get<std::string>()));
    }
    if (!entry.at("gbdt").is_null()) {
      b.tree = gbdt::ModelFromJson(
          nlohmann::json::parse(io::ReadFile(dir / entry.at("gbdt").get<std::string>())));
    }
    e.bundles.push_back(std::move(b));
  }
  Require(!e.bundles.empty(), ErrorCode::kFormat, "ensemble has no bundles");
  Require(e.FeatureNames() == m.at("feature_names").get<std::vector<std::string>>(),
          ErrorCode::kFormat, "stored feature order does not match the bundles");
  return e;
}

// Attribution of the top bundle's tree model for one subject.
inline gbdt::Attribution Explain(const EnsembleBundle& e, const std::vector<double>* embedding,
                                 const DemographicVector& demo) {
  const ClassifierBundle& top = e.bundles.at(0);
  Require(top.tree.has_value(), ErrorCode::kState,
          "ensemble has no tree model to explain (embedding_only mode)");
  return gbdt::TreeShap(*top.tree, top.TreeFeatures(embedding, demo, e.extended_demographics));
}

// ---------------------------------------------------------------------------
// Full runs and ablations
// ---------------------------------------------------------------------------

enum class Ablation { kFull, kNoEnsemble, kNoEncoder, kNoAugment, kEmbeddingOnly };

inline const char* AblationName(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kNoEnsemble: return "no_ensemble";
    case Ablation::kNoEncoder: return "no_encoder";
    case Ablation::kNoAugment: return "no_augment";
    case Ablation::kEmbeddingOnly: return "embedding_only";
  }
  return "?";
}

inline Ablation ParseAblation(const std::string& s) {
  for (Ablation a : {Ablation::kFull, Ablation::kNoEnsemble, Ablation::kNoEncoder,
                     Ablation::kNoAugment, Ablation::kEmbeddingOnly}) {
    if (s == AblationName(a)) return a;
  }
  throw Error(ErrorCode::kConfig, "unknown ablation '" + s + "'");
}

struct PipelineConfig {
  ssrl::SlseConfig slse;
  EnsembleConfig ensemble;
  SplitRatios split;
  cohort::LabelRule labels;
  std::uint64_t seed = 0;
  std::string config_hash;
};

// Seeds derived from the top-level seed.
inline std::uint64_t SlseSeed(std::uint64_t seed) { return DeriveSeed(seed, "slse"); }
inline std::uint64_t EnsembleSeed(std::uint64_t seed) { return DeriveSeed(seed, "ensemble"); }

inline ssrl::SlseConfig SlseConfigFor(const PipelineConfig& cfg, Ablation a) {
  ssrl::SlseConfig s = cfg.slse;
  s.seed = SlseSeed(cfg.seed);
  if (a == Ablation::kNoAugment) {
    s.first_view = augment::AugmentDistribution::Identity();
    s.second_view = augment::AugmentDistribution::Identity();
  }
  return s;
}

inline EnsembleConfig EnsembleConfigFor(const PipelineConfig& cfg, Ablation a) {
  EnsembleConfig e = cfg.ensemble;
  if (a == Ablation::kNoEnsemble) e.k = 1;
  if (a == Ablation::kNoEncoder) e.mode = FeatureMode::kDemographicsOnly;
  if (a == Ablation::kEmbeddingOnly) e.mode = FeatureMode::kEmbeddingOnly;
  return e;
}

inline ssrl::PretrainResult PretrainOnTrain(const Partition& p, const PipelineConfig& cfg,
                                            Ablation a) {
  ssrl::UnlabeledDataset data;
  for (const auto& r : p.train) data.curves.push_back(r.curve);
  return ssrl::Pretrain(data, SlseConfigFor(cfg, a), cfg.config_hash);
}

struct PipelineRun {
  Ablation ablation = Ablation::kFull;
  EnsembleBundle ensemble;
  std::vector<double> test_scores;
  eval::EvalReport report;
};

// Runs the downstream stage with an already pretrained encoder (ignored
// in demographics-only mode).
inline PipelineRun RunDownstream(const Partition& p, const PipelineConfig& cfg, Ablation a,
                                 const ssrl::EncoderCheckpoint* encoder) {
  const EnsembleConfig ecfg = EnsembleConfigFor(cfg, a);
  const ssrl::EncoderCheckpoint* enc = UsesEmbeddings(ecfg.mode) ? encoder : nullptr;
  Require(!UsesEmbeddings(ecfg.mode) || enc != nullptr, ErrorCode::kState,
          std::string(AblationName(a)) + " requires a pretrained encoder");
  PipelineRun run;
  run.ablation = a;
  run.ensemble = TrainEnsemble(MakeLabeledSplit(p.train, enc), MakeLabeledSplit(p.val, enc),
                               ecfg, EnsembleSeed(cfg.seed));
  if (enc != nullptr) run.ensemble.encoder = *enc;
  for (std::size_t i = 0; i < p.test.size(); ++i) {
    run.test_scores.push_back(run.ensemble.Predict(p.test.curve(i), p.test.demo(i)));
  }
  nlohmann::json vals = nlohmann::json::array();
  for (const auto& b : run.ensemble.bundles) vals.push_back(b.val_auroc);
  run.report = Evaluator::Evaluate(
      p.test, run.test_scores,
      {{"ablation", AblationName(a)},
       {"model", FeatureModeName(ecfg.mode)},
       {"seed", cfg.seed},
       {"config_hash", cfg.config_hash},
       {"n_bundles", run.ensemble.bundles.size()},
       {"bundle_val_aurocs", vals},
       {"feature_names", run.ensemble.FeatureNames()}});
  return run;
}

inline PipelineRun RunPipeline(const Partition& p, const PipelineConfig& cfg, Ablation a) {
  std::optional<ssrl::PretrainResult> pre;
  if (UsesEmbeddings(EnsembleConfigFor(cfg, a).mode)) pre = PretrainOnTrain(p, cfg, a);
  return RunDownstream(p, cfg, a, pre ? &pre->checkpoint : nullptr);
}

// The full model plus every ablation. The default-augmentation encoder is
// pretrained once and shared by the configurations that use it.
inline std::vector<PipelineRun> RunAblationSuite(const Partition& p, const PipelineConfig& cfg) {
  const ssrl::PretrainResult shared = PretrainOnTrain(p, cfg, Ablation::kFull);
  std::vector<PipelineRun> runs;
  for (Ablation a : {Ablation::kFull, Ablation::kNoEnsemble, Ablation::kNoEncoder,
                     Ablation::kNoAugment, Ablation::kEmbeddingOnly}) {
    if (a == Ablation::kNoAugment) {
      runs.push_back(RunPipeline(p, cfg, a));
    } else {
      runs.push_back(RunDownstream(p, cfg, a, &shared.checkpoint));
    }
  }
  return runs;
}

inline nlohmann::json AblationSummary(const std::vector<PipelineRun>& runs) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : runs) {
    rows.push_back({{"ablation", AblationName(r.ablation)},
                    {"test_auroc", r.report.overall_auroc},
                    {"n_bundles", r.ensemble.bundles.size()},
                    {"feature_names", r.ensemble.FeatureNames()}});
  }
  return rows;
}

}  // namespace slse::pipeline

#endif  // SLSE_PIPELINE_HPP_
