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

// Spirometry preprocessing: raw volume-time blows to fixed-length
// flow-volume curves, plus the usual clinical landmarks (FVC, FEV1, PEF,
// FEF25/50/75).

#ifndef SLSE_SPIRO_HPP_
#define SLSE_SPIRO_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "slse/common.hpp"

namespace slse::spiro {

// Every curve is zero-padded (or truncated) to this many samples.
inline constexpr std::size_t kCurveLength = 1000;
inline constexpr double kDefaultSamplePeriodS = 0.01;

struct VolumeTimeSeries {
  std::string subject_id;
  std::vector<double> samples;  // exhaled volume, liters
  double sample_period_s = kDefaultSamplePeriodS;

  void Validate() const {
    Require(!samples.empty(), ErrorCode::kValidation,
            "volume series for '" + subject_id + "' is empty");
    Require(AllFinite(samples), ErrorCode::kValidation,
            "volume series for '" + subject_id + "' has non-finite samples");
    Require(sample_period_s > 0 && std::isfinite(sample_period_s),
            ErrorCode::kValidation, "sample period must be positive");
  }
};

// Paired volume/flow arrays of length kCurveLength. Entries at or beyond
// valid_len are exactly zero.
struct FlowVolumeCurve {
  std::string subject_id;
  std::vector<double> volume = std::vector<double>(kCurveLength, 0.0);
  std::vector<double> flow = std::vector<double>(kCurveLength, 0.0);
  std::size_t valid_len = 0;

  std::span<const double> ValidVolume() const {
    return std::span<const double>(volume).first(valid_len);
  }
  std::span<const double> ValidFlow() const {
    return std::span<const double>(flow).first(valid_len);
  }

  void Validate() const {
    Require(volume.size() == kCurveLength && flow.size() == kCurveLength,
            ErrorCode::kValidation, "curve arrays must have length 1000");
    Require(valid_len > 0 && valid_len <= kCurveLength, ErrorCode::kValidation,
            "curve valid_len out of range");
    for (std::size_t i = valid_len; i < kCurveLength; ++i) {
      Require(volume[i] == 0.0 && flow[i] == 0.0, ErrorCode::kValidation,
              "curve padding must be zero");
    }
    Require(AllFinite(volume) && AllFinite(flow), ErrorCode::kValidation,
            "curve has non-finite values");
  }

  friend bool operator==(const FlowVolumeCurve&,
                         const FlowVolumeCurve&) = default;
};

struct SpiroFeatures {
  double fvc = 0;   // L
  double fev1 = 0;  // L
  double pef = 0;   // L/s
  double fef25 = 0;
  double fef50 = 0;
  double fef75 = 0;
};

inline std::vector<double> MlToLiters(std::span<const double> raw_ml) {
  std::vector<double> out;
  out.reserve(raw_ml.size());
  for (double v : raw_ml) {
    Require(std::isfinite(v) && v >= 0, ErrorCode::kValidation,
            "volume in ml must be finite and non-negative");
    out.push_back(v / 1000.0);
  }
  return out;
}

// Forward differences; the last element repeats its predecessor so the
// output has the same length as the input.
inline std::vector<double> VolumeToFlow(const VolumeTimeSeries& vt) {
  vt.Validate();
  const auto& v = vt.samples;
  Require(v.size() >= 2, ErrorCode::kValidation,
          "flow derivation needs at least 2 samples");
  std::vector<double> flow(v.size());
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    flow[i] = (v[i + 1] - v[i]) / vt.sample_period_s;
  }
  flow.back() = flow[v.size() - 2];
  return flow;
}

enum class RejectReason { kNone, kNonFinite, kTooSmall, kTooShort, kNonMonotone };

inline const char* RejectReasonName(RejectReason r) {
  switch (r) {
    case RejectReason::kNone: return "none";
    case RejectReason::kNonFinite: return "non_finite";
    case RejectReason::kTooSmall: return "too_small";
    case RejectReason::kTooShort: return "too_short";
    case RejectReason::kNonMonotone: return "non_monotone";
  }
  return "unknown";
}

struct BlowValidityRule {
  double min_volume_l = 0.5;
  double min_duration_s = 0.5;
  double monotone_tolerance_l = 1e-6;
};

struct BlowVerdict {
  RejectReason reason = RejectReason::kNone;
  bool accepted() const { return reason == RejectReason::kNone; }
};

inline BlowVerdict CheckBlowValidity(const VolumeTimeSeries& vt,
                                     const BlowValidityRule& rule = {}) {
  const auto& v = vt.samples;
  if (v.empty() || !AllFinite(v) || !(vt.sample_period_s > 0)) {
    return {RejectReason::kNonFinite};
  }
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[i - 1] - rule.monotone_tolerance_l) {
      return {RejectReason::kNonMonotone};
    }
  }
  if (v.back() - v.front() < rule.min_volume_l) return {RejectReason::kTooSmall};
  const double duration = static_cast<double>(v.size()) * vt.sample_period_s;
  if (duration < rule.min_duration_s) return {RejectReason::kTooShort};
  return {};
}

class RejectedBlow : public Error {
 public:
  RejectedBlow(const std::string& subject_id, RejectReason reason)
      : Error(ErrorCode::kRejected, "blow for '" + subject_id +
                                        "' rejected: " + RejectReasonName(reason)),
        reason_(reason) {}
  RejectReason reason() const { return reason_; }

 private:
  RejectReason reason_;
};

// Series longer than kCurveLength are truncated; shorter ones zero-padded.
inline FlowVolumeCurve MakeFlowVolume(const VolumeTimeSeries& vt,
                                      const BlowValidityRule& rule = {}) {
  const BlowVerdict verdict = CheckBlowValidity(vt, rule);
  if (!verdict.accepted()) throw RejectedBlow(vt.subject_id, verdict.reason);
  const std::vector<double> flow = VolumeToFlow(vt);
  FlowVolumeCurve curve;
  curve.subject_id = vt.subject_id;
  curve.valid_len = std::min(vt.samples.size(), kCurveLength);
  std::copy_n(vt.samples.begin(), curve.valid_len, curve.volume.begin());
  std::copy_n(flow.begin(), curve.valid_len, curve.flow.begin());
  return curve;
}

namespace internal {

// Flow at the first crossing of `target` volume, interpolated linearly
// within the crossing segment.
inline double FlowAtVolume(const FlowVolumeCurve& c, double target) {
  const auto vol = c.ValidVolume();
  const auto flow = c.ValidFlow();
  if (target <= vol[0]) return flow[0];
  for (std::size_t i = 1; i < vol.size(); ++i) {
    if (vol[i] >= target) {
      const double dv = vol[i] - vol[i - 1];
      if (dv <= 0) return flow[i];
      const double frac = (target - vol[i - 1]) / dv;
      return flow[i - 1] + frac * (flow[i] - flow[i - 1]);
    }
  }
  return flow.back();
}

}  // namespace internal

inline SpiroFeatures DeriveFeatures(const FlowVolumeCurve& c,
                                    double sample_period_s = kDefaultSamplePeriodS) {
  Require(c.valid_len >= 2, ErrorCode::kValidation,
          "feature derivation needs valid_len >= 2");
  SpiroFeatures f;
  f.fvc = c.volume[c.valid_len - 1];
  Require(f.fvc > 0, ErrorCode::kValidation, "degenerate curve: FVC = 0");
  const auto flow = c.ValidFlow();
  f.pef = *std::max_element(flow.begin(), flow.end());
  f.fef25 = internal::FlowAtVolume(c, 0.25 * f.fvc);
  f.fef50 = internal::FlowAtVolume(c, 0.50 * f.fvc);
  f.fef75 = internal::FlowAtVolume(c, 0.75 * f.fvc);
  const double one_second = 1.0 / sample_period_s;
  if (one_second > static_cast<double>(c.valid_len - 1)) {
    f.fev1 = f.fvc;
  } else {
    f.fev1 = InterpolateAt(c.ValidVolume(), one_second);
  }
  return f;
}

}  // namespace slse::spiro

#endif  // SLSE_SPIRO_HPP_
