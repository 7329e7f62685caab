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

// Run configuration document. The defaults double as the schema: a user
// document may only contain keys present in DefaultJson(), with matching
// JSON types, and is merged over the defaults before parsing.

#ifndef SLSE_CONFIG_HPP_
#define SLSE_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "slse/augment.hpp"
#include "slse/common.hpp"
#include "slse/pipeline.hpp"
#include "slse/spiro.hpp"
#include "slse/synth.hpp"

namespace slse::config {

using nlohmann::json;

struct RunConfig {
  std::uint64_t seed = 7;
  std::string out_dir = "slse_out";
  synth::CohortConfig synth;
  spiro::BlowValidityRule blow;
  pipeline::PipelineConfig pipeline;

  // Every stage's settings except seed and paths, which do not enter the
  // config hash.
  json SettingsJson() const;
  json ToJson() const {
    json j = SettingsJson();
    j["seed"] = seed;
    j["paths"] = {{"out", out_dir}};
    return j;
  }
  std::string Hash() const { return HexU64(Fnv1a64(SettingsJson().dump())); }

  // Derived per-stage settings carrying the top-level seed.
  synth::CohortConfig SynthConfig() const {
    synth::CohortConfig c = synth;
    c.seed = DeriveSeed(seed, "synth");
    return c;
  }
  pipeline::PipelineConfig Pipeline() const {
    pipeline::PipelineConfig p = pipeline;
    p.seed = seed;
    p.config_hash = Hash();
    return p;
  }

  void Validate() const {
    synth.Validate();
    pipeline.split.Validate();
    pipeline.slse.Validate();
    pipeline.ensemble.Validate();
    pipeline.ensemble.gbdt.Validate();
    Require(blow.min_volume_l >= 0 && blow.min_duration_s >= 0 && blow.monotone_tolerance_l >= 0,
            ErrorCode::kConfig, "preprocess thresholds must be non-negative");
    Require(pipeline.ensemble.gbdt.subsample > 0 && pipeline.ensemble.gbdt.subsample <= 1,
            ErrorCode::kConfig, "gbdt.subsample must lie in (0, 1]");
  }
};

namespace internal {

inline json RangeJson(const augment::Range& r) { return json::array({r.lo, r.hi}); }

inline json AugmentEntryJson(const augment::AugmentDistribution::Entry& e) {
  const augment::AugmentTemplate& t = e.augment;
  json j = {{"kind", augment::AugmentKindName(t.kind)}, {"weight", e.weight}};
  switch (t.kind) {
    case augment::AugmentKind::kGaussianNoise:
      j["noise_mean"] = RangeJson(t.noise_mean);
      j["noise_sigma"] = RangeJson(t.noise_sigma);
      break;
    case augment::AugmentKind::kPostPeakAmplify:
      j["delay"] = RangeJson(t.delay);
      j["window"] = RangeJson(t.window);
      j["gain"] = RangeJson(t.gain);
      break;
    case augment::AugmentKind::kVerticalStretch:
      j["alpha"] = RangeJson(t.alpha);
      break;
    case augment::AugmentKind::kDownsample:
      j["rho"] = RangeJson(t.rho);
      break;
    default:
      break;
  }
  return j;
}

inline json DistributionJson(const augment::AugmentDistribution& d) {
  json arr = json::array();
  for (const auto& e : d.entries) arr.push_back(AugmentEntryJson(e));
  return arr;
}

inline augment::Range ParseRange(const json& j, const std::string& where) {
  Require(j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number(),
          ErrorCode::kConfig, where + " must be a [lo, hi] pair");
  augment::Range r{j[0].get<double>(), j[1].get<double>()};
  Require(r.lo <= r.hi, ErrorCode::kConfig, where + ": lo must not exceed hi");
  return r;
}

inline augment::AugmentDistribution ParseDistribution(const json& arr, const std::string& where) {
  Require(arr.is_array() && !arr.empty(), ErrorCode::kConfig,
          where + " must be a non-empty array");
  augment::AugmentDistribution d;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const json& e = arr[i];
    const std::string at = where + "[" + std::to_string(i) + "]";
    Require(e.is_object() && e.contains("kind") && e["kind"].is_string(), ErrorCode::kConfig,
            at + " needs a string 'kind'");
    augment::AugmentDistribution::Entry entry;
    entry.augment.kind = augment::ParseAugmentKind(e["kind"].get<std::string>());
    // Parameters not listed for this kind are rejected via the key check.
    const json defaults = AugmentEntryJson(entry);
    for (const auto& [key, value] : e.items()) {
      Require(key == "kind" || key == "weight" || defaults.contains(key), ErrorCode::kConfig, at + ": unknown key '" + key + "'");
      if (key == "weight") {
        Require(value.is_number(), ErrorCode::kConfig, at + ".weight must be a number");
        entry.weight = value.get<double>();
      }
    }
    auto& t = entry.augment;
    if (e.contains("noise_mean")) t.noise_mean = ParseRange(e["noise_mean"], at + ".noise_mean");
    if (e.contains("noise_sigma")) t.noise_sigma = ParseRange(e["noise_sigma"], at + ".noise_sigma");
    if (e.contains("delay")) t.delay = ParseRange(e["delay"], at + ".delay");
    if (e.contains("window")) t.window = ParseRange(e["window"], at + ".window");
    if (e.contains("gain")) t.gain = ParseRange(e["gain"], at + ".gain");
    if (e.contains("alpha")) t.alpha = ParseRange(e["alpha"], at + ".alpha");
    if (e.contains("rho")) t.rho = ParseRange(e["rho"], at + ".rho");
    d.entries.push_back(entry);
  }
  d.Validate();
  return d;
}

inline bool SameKind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    // Integer-valued settings accept only non-negative integers.
    if (a.is_number_unsigned() || a.is_number_integer()) {
      return b.is_number_unsigned() || (b.is_number_integer() && b.get<long long>() >= 0);
    }
    return true;
  }
  return a.type() == b.type();
}

// Overlays `user` on `base`, rejecting unknown keys and type changes.
// Arrays are replaced wholesale.
inline void MergeStrict(json& base, const json& user, const std::string& path) {
  Require(user.is_object(), ErrorCode::kConfig,
          (path.empty() ? std::string("config") : path) + " must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    Require(base.contains(key), ErrorCode::kConfig, "unknown config key '" + where + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      MergeStrict(slot, value, where);
    } else {
      Require(SameKind(slot, value), ErrorCode::kConfig,
              "config key '" + where + "' expects " + std::string(slot.type_name()) +
                  (slot.is_number_unsigned() ? " (non-negative integer)" : ""));
      slot = value;
    }
  }
}

}  // namespace internal

inline json RunConfig::SettingsJson() const {
  const auto& s = pipeline.slse;
  const auto& e = pipeline.ensemble;
  const auto& g = e.gbdt;
  const auto& r = synth.risk;
  return {
      {"synth",
       {{"n_subjects", synth.n_subjects},
        {"positive_rate", synth.positive_rate},
        {"effect_size", synth.effect_size},
        {"severity_weight", synth.severity_weight},
        {"rvef_noise_sd", synth.rvef_noise_sd},
        {"risk",
         {{"age_per_decade", r.age_per_decade},
          {"male", r.male},
          {"smoke", r.smoke},
          {"copd", r.copd},
          {"ckd", r.ckd},
          {"chd", r.chd},
          {"vhd", r.vhd}}},
        {"scoop_gain", synth.scoop_gain},
        {"scoop_base", synth.scoop_base},
        {"shape_noise_sd", synth.shape_noise_sd},
        {"fvc_noise_sd", synth.fvc_noise_sd},
        {"pef_noise_sd", synth.pef_noise_sd},
        {"flow_jitter_sd", synth.flow_jitter_sd},
        {"stop_flow", synth.stop_flow},
        {"max_samples", synth.max_samples},
        {"period_ms", synth.period_ms}}},
      {"preprocess",
       {{"min_volume_l", blow.min_volume_l},
        {"min_duration_s", blow.min_duration_s},
        {"monotone_tolerance_l", blow.monotone_tolerance_l}}},
      {"labels",
       {{"rvef_threshold", pipeline.labels.rvef_threshold},
        {"rvef_inclusive", pipeline.labels.rvef_inclusive},
        {"lvef_threshold", pipeline.labels.lvef_threshold}}},
      {"split",
       {{"train", pipeline.split.train},
        {"val", pipeline.split.val},
        {"test", pipeline.split.test}}},
      {"slse",
       {{"encoder",
         {{"conv_channels", s.encoder.conv_channels},
          {"kernel", s.encoder.kernel},
          {"stride", s.encoder.stride},
          {"latent_dim", s.encoder.latent_dim}}},
        {"projector", {{"hidden", s.projector.hidden}, {"output", s.projector.output}}},
        {"predictor", {{"hidden", s.predictor.hidden}, {"output", s.predictor.output}}},
        {"tau", s.tau},
        {"adam",
         {{"learning_rate", s.adam.learning_rate},
          {"beta1", s.adam.beta1},
          {"beta2", s.adam.beta2},
          {"epsilon", s.adam.epsilon}}},
        {"batch_size", s.batch_size},
        {"total_steps", s.total_steps},
        {"workers", s.workers},
        {"first_view", internal::DistributionJson(s.first_view)},
        {"second_view", internal::DistributionJson(s.second_view)}}},
      {"probe",
       {{"hidden", e.probe.hidden},
        {"steps", e.probe.steps},
        {"batch_size", e.probe.batch_size},
        {"learning_rate", e.probe.adam.learning_rate}}},
      {"gbdt",
       {{"n_trees", g.n_trees},
        {"max_depth", g.max_depth},
        {"shrinkage", g.shrinkage},
        {"min_child_weight", g.min_child_weight},
        {"l2", g.l2},
        {"min_split_gain", g.min_split_gain},
        {"subsample", g.subsample}}},
      {"ensemble",
       {{"n_runs", e.n_runs},
        {"k", e.k},
        {"extended_demographics", e.extended_demographics}}},
  };
}

inline json DefaultJson() { return RunConfig{}.ToJson(); }

// Parses a document already merged over the defaults.
inline RunConfig FromResolvedJson(const json& j) {
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.out_dir = j.at("paths").at("out").get<std::string>();

    const json& sy = j.at("synth");
    c.synth.n_subjects = sy.at("n_subjects").get<std::size_t>();
    c.synth.positive_rate = sy.at("positive_rate").get<double>();
    c.synth.effect_size = sy.at("effect_size").get<double>();
    c.synth.severity_weight = sy.at("severity_weight").get<double>();
    c.synth.rvef_noise_sd = sy.at("rvef_noise_sd").get<double>();
    const json& rk = sy.at("risk");
    c.synth.risk = {rk.at("age_per_decade").get<double>(), rk.at("male").get<double>(),
                    rk.at("smoke").get<double>(),          rk.at("copd").get<double>(),
                    rk.at("ckd").get<double>(),            rk.at("chd").get<double>(),
                    rk.at("vhd").get<double>()};
    c.synth.scoop_gain = sy.at("scoop_gain").get<double>();
    c.synth.scoop_base = sy.at("scoop_base").get<double>();
    c.synth.shape_noise_sd = sy.at("shape_noise_sd").get<double>();
    c.synth.fvc_noise_sd = sy.at("fvc_noise_sd").get<double>();
    c.synth.pef_noise_sd = sy.at("pef_noise_sd").get<double>();
    c.synth.flow_jitter_sd = sy.at("flow_jitter_sd").get<double>();
    c.synth.stop_flow = sy.at("stop_flow").get<double>();
    c.synth.max_samples = sy.at("max_samples").get<std::size_t>();
    c.synth.period_ms = sy.at("period_ms").get<double>();

    const json& pp = j.at("preprocess");
    c.blow = {pp.at("min_volume_l").get<double>(), pp.at("min_duration_s").get<double>(),
              pp.at("monotone_tolerance_l").get<double>()};

    const json& lb = j.at("labels");
    c.pipeline.labels = {lb.at("rvef_threshold").get<double>(),
                         lb.at("rvef_inclusive").get<bool>(),
                         lb.at("lvef_threshold").get<double>()};

    const json& sp = j.at("split");
    c.pipeline.split = {sp.at("train").get<double>(), sp.at("val").get<double>(),
                        sp.at("test").get<double>()};

    const json& sl = j.at("slse");
    auto& s = c.pipeline.slse;
    s.encoder.conv_channels = sl.at("encoder").at("conv_channels").get<std::vector<std::size_t>>();
    s.encoder.kernel = sl.at("encoder").at("kernel").get<std::size_t>();
    s.encoder.stride = sl.at("encoder").at("stride").get<std::size_t>();
    s.encoder.latent_dim = sl.at("encoder").at("latent_dim").get<std::size_t>();
    s.projector = {sl.at("projector").at("hidden").get<std::size_t>(),
                   sl.at("projector").at("output").get<std::size_t>()};
    s.predictor = {sl.at("predictor").at("hidden").get<std::size_t>(),
                   sl.at("predictor").at("output").get<std::size_t>()};
    s.tau = sl.at("tau").get<double>();
    s.adam = {sl.at("adam").at("learning_rate").get<double>(),
              sl.at("adam").at("beta1").get<double>(), sl.at("adam").at("beta2").get<double>(),
              sl.at("adam").at("epsilon").get<double>()};
    s.batch_size = sl.at("batch_size").get<std::size_t>();
    s.total_steps = sl.at("total_steps").get<std::size_t>();
    s.workers = sl.at("workers").get<std::size_t>();
    s.first_view = internal::ParseDistribution(sl.at("first_view"), "slse.first_view");
    s.second_view = internal::ParseDistribution(sl.at("second_view"), "slse.second_view");

    auto& e = c.pipeline.ensemble;
    const json& pr = j.at("probe");
    e.probe.hidden = pr.at("hidden").get<std::size_t>();
    e.probe.steps = pr.at("steps").get<std::size_t>();
    e.probe.batch_size = pr.at("batch_size").get<std::size_t>();
    e.probe.adam.learning_rate = pr.at("learning_rate").get<double>();

    const json& gb = j.at("gbdt");
    e.gbdt.n_trees = gb.at("n_trees").get<std::size_t>();
    e.gbdt.max_depth = gb.at("max_depth").get<std::size_t>();
    e.gbdt.shrinkage = gb.at("shrinkage").get<double>();
    e.gbdt.min_child_weight = gb.at("min_child_weight").get<double>();
    e.gbdt.l2 = gb.at("l2").get<double>();
    e.gbdt.min_split_gain = gb.at("min_split_gain").get<double>();
    e.gbdt.subsample = gb.at("subsample").get<double>();

    const json& en = j.at("ensemble");
    e.n_runs = en.at("n_runs").get<std::size_t>();
    e.k = en.at("k").get<std::size_t>();
    e.extended_demographics = en.at("extended_demographics").get<bool>();
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kConfig, std::string("malformed config: ") + ex.what());
  }
  c.Validate();
  return c;
}

inline RunConfig FromJson(const json& user) {
  json merged = DefaultJson();
  internal::MergeStrict(merged, user, "");
  return FromResolvedJson(merged);
}

inline RunConfig Load(const std::filesystem::path& path) {
  json user;
  try {
    user = json::parse(io::ReadFile(path));
  } catch (const json::parse_error& ex) {
    throw Error(ErrorCode::kConfig, path.string() + ": " + ex.what());
  }
  return FromJson(user);
}

}  // namespace slse::config

#endif  // SLSE_CONFIG_HPP_
