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

// Deterministic synthetic cohort.
//
// Each subject carries a latent severity s ~ N(0, 1). The expiratory limb of
// the blow decays as flow = PEF * (R / R0)^p, where R is the volume left to
// exhale and p = p_base * exp(effect_size * scoop_gain * s + shape noise), so
// larger s gives a more concave ("scooped") mid-expiratory segment. RVEF is
// baseline - severity_weight * s - demographic risk + noise; the baseline is
// placed so the cohort hits the requested positive rate exactly.

#ifndef SLSE_SYNTH_HPP_
#define SLSE_SYNTH_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "slse/cohort.hpp"
#include "slse/common.hpp"

namespace slse::synth {

// RVEF points subtracted per unit of each risk factor.
struct RiskWeights {
  double age_per_decade = 1.5;  // relative to age 55
  double male = 3.0;
  double smoke = 1.0;
  double copd = 3.0;
  double ckd = 2.0;
  double chd = 2.0;
  double vhd = 3.0;
};

struct CohortConfig {
  std::size_t n_subjects = 2000;
  double positive_rate = 0.2;
  double effect_size = 1.0;  // lambda
  double severity_weight = 6.0;
  double rvef_noise_sd = 5.0;
  RiskWeights risk;
  double scoop_gain = 0.35;
  double scoop_base = 1.3;
  double shape_noise_sd = 0.1;
  double fvc_noise_sd = 0.12;  // log scale
  double pef_noise_sd = 0.10;  // log scale
  double flow_jitter_sd = 0.01;
  double stop_flow = 0.05;  // L/s
  std::size_t max_samples = 1200;
  double period_ms = 10.0;
  std::uint64_t seed = 0;

  void Validate() const {
    Require(n_subjects >= 10, ErrorCode::kConfig, "n_subjects must be >= 10");
    Require(positive_rate > 0 && positive_rate < 1, ErrorCode::kConfig,
            "positive_rate must lie in (0, 1)");
    Require(effect_size >= 0 && effect_size <= 1, ErrorCode::kConfig,
            "effect_size must lie in [0, 1]");
    Require(severity_weight >= 0 && rvef_noise_sd > 0, ErrorCode::kConfig,
            "severity_weight must be >= 0 and rvef_noise_sd > 0");
    Require(scoop_base > 0 && scoop_gain >= 0 && shape_noise_sd >= 0, ErrorCode::kConfig,
            "invalid scoop parameters");
    Require(fvc_noise_sd >= 0 && pef_noise_sd >= 0 && flow_jitter_sd >= 0 &&
                flow_jitter_sd < 0.2,
            ErrorCode::kConfig, "invalid noise levels");
    Require(stop_flow > 0 && max_samples >= 100 && period_ms > 0, ErrorCode::kConfig,
            "invalid blow integration settings");
  }
};

// Plausible range for the cohort's baseline RVEF; outside it the requested
// positive rate cannot be reached with the configured weights.
inline constexpr double kMinBaselineRvef = 35.0;
inline constexpr double kMaxBaselineRvef = 90.0;

struct SyntheticCohort {
  std::vector<cohort::RawBlow> blows;
  std::vector<cohort::CohortRow> rows;
  std::vector<double> severity;  // latent, for diagnostics only
  std::vector<double> fvc;       // configured FVC per subject, liters
  double baseline_rvef = 0;
};

namespace internal {

struct Subject {
  cohort::DemographicVector demo;
  double severity = 0;
  double rvef_noise = 0;
  double lvef_noise = 0;
  double fvc = 0;
  std::vector<double> volume_l;
};

inline int Bernoulli(Rng& rng, double p) {
  return std::bernoulli_distribution(std::clamp(p, 0.0, 1.0))(rng) ? 1 : 0;
}

inline cohort::DemographicVector SampleDemographics(Rng& rng) {
  std::normal_distribution<double> age_dist(56.0, 9.0);
  cohort::DemographicVector d;
  d.age = static_cast<int>(std::clamp(std::lround(age_dist(rng)), 18L, 85L));
  d.sex = Bernoulli(rng, 0.5);
  d.smoke = Bernoulli(rng, 0.35 + 0.1 * d.sex);
  d.copd = Bernoulli(rng, 0.04 + 0.06 * d.smoke);
  d.obesity = Bernoulli(rng, 0.22);
  d.hypertension = Bernoulli(rng, 0.2 + 0.01 * (d.age - 55));
  d.diabetes = Bernoulli(rng, 0.06 + 0.04 * d.obesity);
  d.ckd = Bernoulli(rng, 0.03 + 0.002 * std::max(0, d.age - 55));
  d.chd = Bernoulli(rng, 0.04 + 0.04 * d.sex);
  d.vhd = Bernoulli(rng, 0.03);
  return d;
}

inline double DemographicRisk(const cohort::DemographicVector& d, const RiskWeights& w) {
  return w.age_per_decade * (d.age - 55) / 10.0 + w.male * d.sex + w.smoke * d.smoke +
         w.copd * d.copd + w.ckd * d.ckd + w.chd * d.chd + w.vhd * d.vhd;
}

// Volume-time series in liters: linear rise to PEF, then power-law decay
// with exponent `p`, integrated at the sampling period.
inline std::vector<double> IntegrateBlow(double fvc, double pef, double rise_s, double p,
                                         const CohortConfig& cfg, Rng& rng) {
  const double dt = cfg.period_ms / 1000.0;
  std::normal_distribution<double> jitter(0.0, cfg.flow_jitter_sd);
  const double rise_volume = 0.5 * pef * rise_s;
  const double r0 = fvc - rise_volume;
  std::vector<double> v = {0.0};
  double vol = 0;
  for (std::size_t k = 0; k + 1 < cfg.max_samples; ++k) {
    const double t = static_cast<double>(k) * dt;
    double flow;
    if (t < rise_s) {
      flow = pef * std::max(t, 0.5 * dt) / rise_s;
    } else {
      const double remaining = std::max(fvc - vol, 0.0);
      flow = pef * std::pow(std::min(remaining / r0, 1.0), p);
      if (flow < cfg.stop_flow) break;
    }
    flow *= std::max(0.0, 1.0 + jitter(rng));
    vol = std::min(vol + flow * dt, fvc);
    v.push_back(vol);
  }
  return v;
}

inline Subject GenerateSubject(const CohortConfig& cfg, std::size_t index) {
  Rng rng(MixSeed(cfg.seed, index));
  std::normal_distribution<double> unit(0.0, 1.0);
  Subject s;
  s.demo = SampleDemographics(rng);
  s.severity = unit(rng);
  s.rvef_noise = unit(rng);
  s.lvef_noise = unit(rng);
  const double age_dev = s.demo.age - 55.0;
  s.fvc = std::max(1.0, (4.0 + 0.9 * s.demo.sex - 0.02 * age_dev) *
                            std::exp(cfg.fvc_noise_sd * unit(rng)));
  const double pef = std::max(2.0, (7.5 + 1.8 * s.demo.sex - 0.03 * age_dev) *
                                       std::exp(cfg.pef_noise_sd * unit(rng)));
  const double rise_s = std::uniform_real_distribution<double>(0.06, 0.12)(rng);
  const double p = cfg.scoop_base * std::exp(cfg.effect_size * cfg.scoop_gain * s.severity +
                                             cfg.shape_noise_sd * unit(rng));
  s.volume_l = IntegrateBlow(s.fvc, pef, rise_s, p, cfg, rng);
  return s;
}

inline double RoundMl(double liters) { return std::round(liters * 1e6) / 1e3; }

}  // namespace internal

inline SyntheticCohort GenerateCohort(const CohortConfig& cfg) {
  cfg.Validate();
  const std::size_t n = cfg.n_subjects;
  std::vector<internal::Subject> subjects;
  subjects.reserve(n);
  for (std::size_t i = 0; i < n; ++i) subjects.push_back(internal::GenerateSubject(cfg, i));

  // RVEF deviation from baseline; the baseline puts exactly
  // round(rate * n) subjects at or below 45.
  std::vector<double> deviation(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = subjects[i];
    deviation[i] = -cfg.severity_weight * s.severity -
                   internal::DemographicRisk(s.demo, cfg.risk) +
                   cfg.rvef_noise_sd * s.rvef_noise;
  }
  std::vector<double> sorted = deviation;
  std::sort(sorted.begin(), sorted.end());
  const auto positives = static_cast<std::size_t>(std::clamp<long>(
      std::lround(cfg.positive_rate * static_cast<double>(n)), 1L,
      static_cast<long>(n) - 1));
  const double cut = 0.5 * (sorted[positives - 1] + sorted[positives]);
  const cohort::LabelRule rule;
  const double baseline = rule.rvef_threshold - cut;
  Require(baseline >= kMinBaselineRvef && baseline <= kMaxBaselineRvef, ErrorCode::kConfig,
          "positive_rate " + FormatDouble(cfg.positive_rate) +
              " is infeasible with the configured weights (baseline RVEF " +
              FormatDouble(baseline) + ")");

  SyntheticCohort out;
  out.baseline_rvef = baseline;
  out.blows.reserve(n);
  out.rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = subjects[i];
    const std::string id = "S" + std::to_string(100000 + i);
    cohort::RawBlow blow{id, cfg.period_ms, {}};
    blow.samples_ml.reserve(s.volume_l.size());
    for (double v : s.volume_l) blow.samples_ml.push_back(internal::RoundMl(v));
    out.blows.push_back(std::move(blow));

    const double rvef = std::clamp(baseline + deviation[i], 10.0, 85.0);
    const double lvef = std::clamp(
        60.0 + 0.3 * (rvef - baseline) - 3.0 * s.demo.chd + 5.0 * s.lvef_noise, 15.0, 80.0);
    cohort::CohortRow row{id, s.demo, rvef, lvef};
    row.demo.lhf = cohort::DeriveLabels(rvef, lvef, rule).lhf;
    out.rows.push_back(std::move(row));
    out.severity.push_back(s.severity);
    out.fvc.push_back(s.fvc);
  }
  return out;
}

// Preprocesses the blows and joins them to the cohort rows.
inline std::vector<cohort::SubjectRecord> ToRecords(const SyntheticCohort& c,
                                                    const cohort::LabelRule& rule = {}) {
  const cohort::PreprocessResult pre = cohort::Preprocess(c.blows);
  return cohort::JoinRecords(c.rows, pre.curves, rule);
}

}  // namespace slse::synth

#endif  // SLSE_SYNTH_HPP_
